"""Dataset comparison: attribute statistics, cluster structure, predictive similarity.

All comparisons work on encoded datasets sharing one fitted schema, so
numeric attributes are already on a [0, 1] scale.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from math import comb
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, ClassifierMixin, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import EncodedDataset, Schema
from .utils import derive_seed, stream


# -- statistics ------------------------------------------------------------


@dataclass
class StatReport:
    per_attribute: List[Tuple[str, float, float]]
    summary_delta_mean: Optional[float]
    summary_delta_std: Optional[float]
    mean_delta_mean: Optional[float] = None
    mean_delta_std: Optional[float] = None
    summary_rule: str = "median"


def _same_schema(a: Schema, b: Schema):
    if a.column_names() != b.column_names() or a.class_index != b.class_index:
        raise ValueError("datasets do not share a schema")


def stats_compare(d1: EncodedDataset, d2: EncodedDataset) -> StatReport:
    """Signed per-attribute differences ``stat(d2) - stat(d1)`` of mean and std.

    Only numeric attributes take part; std uses the population form. The
    headline summaries are medians, with means reported alongside. With no
    numeric attributes the summaries are ``None``.
    """
    _same_schema(d1.schema, d2.schema)
    if len(d1) == 0 or len(d2) == 0:
        raise ValueError("cannot compare empty datasets")
    cols = d1.schema.numeric_columns()
    names = [d1.schema.attributes[d1.schema.column_map[c][0]].name for c in cols]
    a, b = d1.matrix[:, cols], d2.matrix[:, cols]
    dm = b.mean(axis=0) - a.mean(axis=0)
    ds = b.std(axis=0) - a.std(axis=0)
    per = [(n, float(m), float(s)) for n, m, s in zip(names, dm, ds)]
    if not per:
        return StatReport([], None, None)
    return StatReport(
        per, float(np.median(dm)), float(np.median(ds)), float(np.mean(dm)), float(np.mean(ds))
    )


# -- clustering ------------------------------------------------------------


def adjusted_rand_index(labels_a: Sequence, labels_b: Sequence) -> float:
    """Pair-counting ARI with the Hubert-Arabie expected-index correction.

    When both partitions are trivial in the same way (the expected index
    equals the maximum) the partitions agree perfectly and 1.0 is returned.
    """
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"label vectors differ in shape: {a.shape} vs {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError("need at least 2 labels")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    # exact integer pair counts; one float division at the end
    index = sum(comb(int(v), 2) for v in table.ravel() if v > 1)
    rows = sum(comb(int(v), 2) for v in table.sum(axis=1))
    cols = sum(comb(int(v), 2) for v in table.sum(axis=0))
    total = comb(n, 2)
    numerator = 2 * (index * total - rows * cols)
    denominator = (rows + cols) * total - 2 * rows * cols
    if denominator == 0:
        return 1.0
    return numerator / denominator


def _init_medoids(D: np.ndarray, k: int, rng: np.random.Generator) -> List[int]:
    # k-medoids++ seeding; falls back to the lowest unused index when every
    # remaining point coincides with a chosen medoid
    n = D.shape[0]
    chosen = [int(rng.integers(n))]
    closest = D[chosen[0]].copy()
    while len(chosen) < k:
        weights = closest ** 2
        total = weights.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=weights / total))
        else:
            used = set(chosen)
            nxt = next(i for i in range(n) if i not in used)
        chosen.append(nxt)
        np.minimum(closest, D[nxt], out=closest)
    # a medoid duplicated elsewhere in the data is replaced by its lowest-index
    # copy that is not already a medoid
    out: List[int] = []
    for m in chosen:
        out.append(next(int(i) for i in np.flatnonzero(D[m] == 0.0) if i not in out))
    return sorted(out)


def kmedoids(X, k: int, rng_seed: int = 0, max_iter: int = 100):
    """Alternating k-medoids on Euclidean distance.

    Returns ``(medoid_indices, labels, cost)``. Medoids are kept sorted by row
    index, so assignment and update ties both resolve to the lowest index.
    """
    X = X.matrix if isinstance(X, EncodedDataset) else check_array(X, dtype=np.float64)
    n = X.shape[0]
    if not 2 <= k <= n:
        raise ValueError(f"k must lie in [2, {n}], got {k}")
    D = cdist(X, X)
    medoids = _init_medoids(D, k, np.random.default_rng(rng_seed))
    labels = np.argmin(D[:, medoids], axis=1)
    cost = float(D[np.arange(n), np.asarray(medoids)[labels]].sum())
    for _ in range(max_iter):
        new = []
        for c, m in enumerate(medoids):
            members = np.flatnonzero(labels == c)
            if members.size == 0:
                new.append(m)
                continue
            within = D[np.ix_(members, members)].sum(axis=1)
            new.append(int(members[np.argmin(within)]))
        new = sorted(set(new))
        if len(new) < k:
            # two clusters collapsed onto one row; keep the previous medoids
            break
        new_labels = np.argmin(D[:, new], axis=1)
        new_cost = float(D[np.arange(n), np.asarray(new)[new_labels]].sum())
        if new_cost >= cost:
            break
        medoids, labels, cost = new, new_labels, new_cost
    return np.asarray(medoids), labels, cost


def nearest_medoid(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return np.argmin(cdist(X, centers), axis=1)


class KMedoids(ClusterMixin, BaseEstimator):
    def __init__(self, n_clusters: int = 2, random_state: int = 0, max_iter: int = 100):
        self.n_clusters = n_clusters
        self.random_state = random_state
        self.max_iter = max_iter

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.medoid_indices_, self.labels_, self.inertia_ = kmedoids(
            X, self.n_clusters, self.random_state, self.max_iter
        )
        self.cluster_centers_ = X[self.medoid_indices_]
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        return nearest_medoid(check_array(X, dtype=np.float64), self.cluster_centers_)


@dataclass
class ClusterReport:
    k: int
    ari: float
    medoids_1: np.ndarray
    medoids_2: np.ndarray
    labels_a: np.ndarray
    labels_b: np.ndarray


def cluster_compare(d1, d2, k: int, rng_seed: int = 0) -> ClusterReport:
    """Cross-assign each dataset to the other's medoids and compare with ARI.

    Clustering A labels ``d1`` by its own clusters and ``d2`` by nearest
    ``d1`` medoid; clustering B labels ``d2`` by its own clusters and ``d1``
    by nearest ``d2`` medoid. Both cover ``d1`` followed by ``d2``.
    """
    X1 = d1.matrix if isinstance(d1, EncodedDataset) else check_array(d1, dtype=np.float64)
    X2 = d2.matrix if isinstance(d2, EncodedDataset) else check_array(d2, dtype=np.float64)
    if X1.shape[1] != X2.shape[1]:
        raise ValueError(f"encoded widths differ: {X1.shape[1]} vs {X2.shape[1]}")
    m1, l1, _ = kmedoids(X1, k, rng_seed)
    m2, l2, _ = kmedoids(X2, k, rng_seed)
    a = np.concatenate([l1, nearest_medoid(X2, X1[m1])])
    b = np.concatenate([nearest_medoid(X1, X2[m2]), l2])
    return ClusterReport(k, adjusted_rand_index(a, b), m1, m2, a, b)


# -- random forest ---------------------------------------------------------


class _Tree:
    """CART classifier stored as flat node arrays; a leaf has ``feature == -1``."""

    def __init__(self):
        self.feature: List[int] = []
        self.threshold: List[float] = []
        self.left: List[int] = []
        self.right: List[int] = []
        self.value: List[int] = []

    def _node(self) -> int:
        for arr, v in ((self.feature, -1), (self.threshold, 0.0), (self.left, -1), (self.right, -1), (self.value, 0)):
            arr.append(v)
        return len(self.feature) - 1

    def fit(self, X: np.ndarray, y: np.ndarray, n_classes: int, max_features: int, rng: np.random.Generator):
        n_features = X.shape[1]
        onehot = np.eye(n_classes, dtype=np.float64)[y]
        root = self._node()
        stack = [(root, np.arange(X.shape[0]))]
        while stack:
            node, idx = stack.pop()
            counts = onehot[idx].sum(axis=0)
            self.value[node] = int(np.argmax(counts))
            if idx.size < 2 or np.count_nonzero(counts) == 1:
                continue
            split = self._best_split(X[idx], onehot[idx], n_features, max_features, rng)
            if split is None:
                continue
            f, thr = split
            go_left = X[idx, f] <= thr
            self.feature[node], self.threshold[node] = f, thr
            l, r = self._node(), self._node()
            self.left[node], self.right[node] = l, r
            stack.append((r, idx[~go_left]))
            stack.append((l, idx[go_left]))
        self._freeze()
        return self

    @staticmethod
    def _best_split(Xn, Yn, n_features, max_features, rng):
        order = rng.permutation(n_features)
        # sampled candidates first; further features only if those cannot split
        for start in range(0, n_features, max_features):
            feats = order[start:start + max_features] if start == 0 else order[start:]
            best = _Tree._search(Xn, Yn, feats)
            if best is not None:
                return best
        return None

    @staticmethod
    def _search(Xn, Yn, feats):
        m = Xn.shape[0]
        best_score, best = np.inf, None
        for f in feats:
            x = Xn[:, f]
            order = np.argsort(x, kind="stable")
            xs = x[order]
            valid = xs[1:] > xs[:-1]
            if not valid.any():
                continue
            left = np.cumsum(Yn[order], axis=0)[:-1]
            right = left[-1] + Yn[order[-1]] - left
            nl = np.arange(1, m, dtype=np.float64)
            nr = m - nl
            # n_l * gini_l + n_r * gini_r
            score = (nl - (left ** 2).sum(axis=1) / nl) + (nr - (right ** 2).sum(axis=1) / nr)
            score[~valid] = np.inf
            i = int(np.argmin(score))
            if score[i] < best_score:
                best_score = score[i]
                best = (int(f), float((xs[i] + xs[i + 1]) / 2.0))
        return best

    def _freeze(self):
        self.feature = np.asarray(self.feature)
        self.threshold = np.asarray(self.threshold)
        self.left = np.asarray(self.left)
        self.right = np.asarray(self.right)
        self.value = np.asarray(self.value)

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=int)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            cur = node[rows]
            go_left = X[rows, self.feature[cur]] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
            active[rows] = self.feature[node[rows]] >= 0
        return self.value[node]


class RandomForest(ClassifierMixin, BaseEstimator):
    """Bagged Gini CART trees grown to purity, majority vote.

    Tree ``i`` draws its bootstrap sample and feature subsets from its own
    stream derived from ``(random_state, i)``. Vote ties go to the lowest
    class index.
    """

    def __init__(self, n_estimators: int = 100, max_features="sqrt", bootstrap: bool = True,
                 random_state: int = 0):
        self.n_estimators = n_estimators
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.random_state = random_state

    def _n_candidates(self, n_features: int) -> int:
        if self.max_features == "sqrt":
            return max(1, int(np.sqrt(n_features)))
        if self.max_features is None:
            return n_features
        return max(1, min(n_features, int(self.max_features)))

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, yi = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("training data contain a single class")
        if X.shape[0] < 5:
            raise ValueError(f"need at least 5 training rows, got {X.shape[0]}")
        n = X.shape[0]
        mtry = self._n_candidates(X.shape[1])
        self.estimators_ = []
        for i in range(self.n_estimators):
            rng = stream(int(self.random_state), i)
            rows = rng.integers(0, n, n) if self.bootstrap else np.arange(n)
            self.estimators_.append(_Tree().fit(X[rows], yi[rows], len(self.classes_), mtry, rng))
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "estimators_")
        X = check_array(X, dtype=np.float64)
        votes = np.zeros((X.shape[0], len(self.classes_)), dtype=np.int64)
        rows = np.arange(X.shape[0])
        for tree in self.estimators_:
            np.add.at(votes, (rows, tree.predict(X)), 1)
        return self.classes_[np.argmax(votes, axis=1)]


def random_forest_train(X, y, trees: int = 100, rng_seed: int = 0) -> RandomForest:
    return RandomForest(n_estimators=trees, random_state=rng_seed).fit(X, y)


@dataclass
class PredictiveReport:
    m1d1: float
    m1d2: float
    m2d1: float
    m2d2: float

    @property
    def delta_acc(self) -> float:
        return self.m2d1 - self.m1d1


def stratified_halves(labels: np.ndarray, rng: np.random.Generator):
    """Per class, a shuffled ``ceil(n_c / 2)`` go to training, the rest to testing."""
    train, test = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        cut = idx.size - idx.size // 2
        train.append(idx[:cut])
        test.append(idx[cut:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def predictive_compare(d1: EncodedDataset, d2: EncodedDataset, rng_seed: int = 0,
                       trees: int = 100) -> PredictiveReport:
    """Train a forest on half of each dataset and test both on both test halves."""
    _same_schema(d1.schema, d2.schema)
    X1, y1 = d1.features_and_labels()
    X2, y2 = d2.features_and_labels()
    split_seed = derive_seed(rng_seed, "split")
    forest_seed = derive_seed(rng_seed, "forest")
    halves = []
    for name, y in (("d1", y1), ("d2", y2)):
        present = np.unique(y)
        if present.size < 2:
            raise ValueError(f"{name} contains a single class")
        tr, te = stratified_halves(y, np.random.default_rng(split_seed))
        missing = set(present) - set(np.unique(y[tr]))
        if missing:
            raise ValueError(f"class(es) {sorted(missing)} absent from the {name} training half")
        halves.append((tr, te))
    (tr1, te1), (tr2, te2) = halves
    m1 = random_forest_train(X1[tr1], y1[tr1], trees, forest_seed)
    m2 = random_forest_train(X2[tr2], y2[tr2], trees, forest_seed)

    def acc(model, X, y):
        return float(np.mean(model.predict(X) == y))

    return PredictiveReport(
        m1d1=acc(m1, X1[te1], y1[te1]), m1d2=acc(m1, X2[te2], y2[te2]),
        m2d1=acc(m2, X1[te1], y1[te1]), m2d2=acc(m2, X2[te2], y2[te2]),
    )


# -- combined report -------------------------------------------------------


@dataclass
class ComparisonReport:
    stats: StatReport
    cluster: ClusterReport
    predictive: PredictiveReport
    label: str = ""

    @property
    def delta_mean(self):
        return self.stats.summary_delta_mean

    @property
    def delta_std(self):
        return self.stats.summary_delta_std

    @property
    def ari(self) -> float:
        return self.cluster.ari

    @property
    def delta_acc(self) -> float:
        return self.predictive.delta_acc

    def row(self) -> Dict[str, object]:
        p = self.predictive
        return {
            "generator": self.label,
            "delta_mean": self.delta_mean,
            "delta_std": self.delta_std,
            "ari": self.ari,
            "delta_acc": self.delta_acc,
            "m1d1": p.m1d1, "m1d2": p.m1d2, "m2d1": p.m2d1, "m2d2": p.m2d2,
            "mean_delta_mean": self.stats.mean_delta_mean,
            "mean_delta_std": self.stats.mean_delta_std,
            "k": self.cluster.k,
        }


def compare(d1: EncodedDataset, d2: EncodedDataset, k: Optional[int] = None, rng_seed: int = 0,
            trees: int = 100, label: str = "") -> ComparisonReport:
    """Full comparison; ``k`` defaults to the number of class values."""
    if k is None:
        k = len(d1.schema.class_attribute.categories)
    return ComparisonReport(
        stats_compare(d1, d2),
        cluster_compare(d1, d2, k, derive_seed(rng_seed, "cluster")),
        predictive_compare(d1, d2, derive_seed(rng_seed, "predictive"), trees),
        label,
    )


REPORT_COLUMNS = ["dataset", "generator", "delta_mean", "delta_std", "ari", "delta_acc",
                  "m1d1", "m1d2", "m2d1", "m2d2", "mean_delta_mean", "mean_delta_std", "k"]


def _cell(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def write_reports(reports: Sequence[ComparisonReport], path, dataset: str = "") -> None:
    """Machine-readable CSV, one row per report, absent values written as ``-``."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            row = {"dataset": dataset, **r.row()}
            w.writerow([_cell(row[c]) for c in REPORT_COLUMNS])


def format_reports(reports: Sequence[ComparisonReport], dataset: str = "") -> str:
    """Human-readable table in the layout of the comparison tables."""
    head = f"{'Data set':<20}{'Generator':<10}{'dmean':>9}{'dstd':>9}{'ARI':>8}{'dacc':>9}"
    lines = [head, "-" * len(head)]
    for r in reports:
        vals = [r.delta_mean, r.delta_std]
        stat = "".join(f"{'-':>9}" if v is None else f"{v:>9.3f}" for v in vals)
        lines.append(f"{dataset:<20}{r.label:<10}{stat}{r.ari:>8.3f}{r.delta_acc:>9.3f}")
    return "\n".join(lines)
