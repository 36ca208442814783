"""Seeded tabular data generators (VAE, MCD-VAE, MCD-AE) and their evaluation."""

from .bench import TimingReport, time_generation, time_generators
from .data import (EncodedDataset, FormatError, RawTable, Schema, TabularEncoder, decode, encode,
                   fit_encode, impute_missing, read_table, split_25_25_50)
from .evaluation import (KMedoids, RandomForest, adjusted_rand_index, cluster_compare, compare,
                         predictive_compare, stats_compare)
from .generate import (GENERATORS, GenerationRequest, GeneratedSet, MCDAEGenerator, MCDVAEGenerator,
                       VAEGenerator)
from .models import ArchitectureConfig, TrainedModel, load_model, save_model, train

__version__ = "0.1.0"

__all__ = [
    "ArchitectureConfig", "EncodedDataset", "FormatError", "GENERATORS", "GeneratedSet",
    "GenerationRequest", "KMedoids", "MCDAEGenerator", "MCDVAEGenerator", "RandomForest", "RawTable",
    "Schema", "TabularEncoder", "TimingReport", "TrainedModel", "VAEGenerator", "adjusted_rand_index",
    "cluster_compare", "compare", "decode", "encode", "fit_encode", "impute_missing",
    "load_model", "predictive_compare", "read_table", "save_model", "split_25_25_50", "stats_compare",
    "time_generation", "time_generators", "train",
]
