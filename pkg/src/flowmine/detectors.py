"""Classifiers and outlier scorers over flattened snapshots.

Signature-based detection uses a brute-force KNN classifier on labelled
676-dimensional vectors.  Anomaly-based detection fits one of three scorers
on normal vectors only and scores anything afterwards; higher scores mean
more anomalous:

* ``mnd``  squared Mahalanobis distance under a ridge-regularised Gaussian,
* ``pca``  squared reconstruction error outside the leading principal subspace,
* ``hbos`` sum of negative log histogram masses, one histogram per dimension.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    DegenerateData,
    EmptyClass,
    EmptyTrainingSet,
    FormatMismatch,
    SingularCovariance,
    TooFewSamples,
)
from .packet_model import N_CLASSES, N_RELATIONS
from .snapshot_engine import NORMAL, Snapshot

ATTACK = "Attack"
BINARY_LABELS = (NORMAL, ATTACK)
IDS2018_ATTACKS = (
    "FTP-BruteForce",
    "SSH-Bruteforce",
    "DoS-GoldenEye",
    "DoS-Slowloris",
    "DoS-SlowHTTP",
    "DoS-Hulk",
    "DDoS-LOIC-HTTP",
    "DDOS-HOIC",
    "BruteForce-Web",
    "BruteForce-XSS",
    "SQL-Injection",
    "Infiltration",
    "Botnet",
)
MULTICLASS_LABELS = (NORMAL,) + IDS2018_ATTACKS

DEFAULT_K = 5
DEFAULT_RIDGE = 1e-6
DEFAULT_VARIANCE = 0.95
DEFAULT_BINS = 10
DEFAULT_FLOOR = 1e-9
DEFAULT_CONTAMINATION = 0.1

FORMAT_VERSION = 1


def flatten(s: Union[Snapshot, np.ndarray]) -> np.ndarray:
    m = s.matrix if isinstance(s, Snapshot) else np.asarray(s, dtype=np.float64)
    return m.reshape(N_RELATIONS).copy()


def unflatten(v: np.ndarray) -> np.ndarray:
    return np.asarray(v, dtype=np.float64).reshape(N_CLASSES, N_CLASSES).copy()


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    return X


@dataclass
class LabeledDataset:
    """Feature rows ``X`` with string labels ``y`` from the label space ``labels``."""

    X: np.ndarray
    y: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        self.X = _as_matrix(self.X) if len(self.X) else np.zeros((0, N_RELATIONS))
        self.y = np.asarray(self.y, dtype=str)
        if len(self.X) != len(self.y):
            raise ValueError("X and y lengths differ")
        if not self.labels:
            self.labels = default_label_space(self.y)
        self.labels = tuple(self.labels)
        unknown = set(self.y.tolist()) - set(self.labels)
        if unknown:
            raise ValueError(f"labels outside the declared label space: {sorted(unknown)}")

    def __len__(self):
        return len(self.y)

    @classmethod
    def from_snapshots(cls, snapshots: Iterable[Snapshot], labels: Sequence[str] = ()) -> "LabeledDataset":
        rows, ys = [], []
        for s in snapshots:
            rows.append(s.flat())
            ys.append(s.label)
        X = np.vstack(rows) if rows else np.zeros((0, N_RELATIONS))
        return cls(X, ys, tuple(labels))

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.X[idx], self.y[idx], self.labels)

    def binary(self) -> "LabeledDataset":
        """Collapse every non-Normal label into ``Attack``."""
        y = np.where(self.y == NORMAL, NORMAL, ATTACK)
        return LabeledDataset(self.X, y, BINARY_LABELS)

    def codes(self) -> np.ndarray:
        lookup = {lab: i for i, lab in enumerate(self.labels)}
        return np.array([lookup[v] for v in self.y.tolist()], dtype=np.int64)

    def one_hot(self) -> np.ndarray:
        """Targets as one-hot rows in label-space order; binary gives [1 0] Normal, [0 1] Attack."""
        out = np.zeros((len(self.y), len(self.labels)))
        out[np.arange(len(self.y)), self.codes()] = 1.0
        return out

    def counts(self) -> dict[str, int]:
        c = Counter(self.y.tolist())
        return {lab: c.get(lab, 0) for lab in self.labels}


def default_label_space(y) -> tuple[str, ...]:
    present = set(np.asarray(y, dtype=str).tolist())
    if present <= set(BINARY_LABELS):
        return BINARY_LABELS
    if present <= set(MULTICLASS_LABELS):
        return MULTICLASS_LABELS
    return (NORMAL,) + tuple(sorted(present - {NORMAL}))


def balance(ds: LabeledDataset, mode: str = "under", seed: int = 0) -> LabeledDataset:
    """Equalise Normal and Attack counts by random under- or oversampling."""
    if mode in ("none", None):
        return ds
    if mode not in ("over", "under", "oversample", "undersample"):
        raise ValueError(f"unknown balance mode {mode!r}")
    if set(ds.labels) != set(BINARY_LABELS):
        ds = ds.binary()
    rng = np.random.default_rng(seed)
    normal = np.flatnonzero(ds.y == NORMAL)
    attack = np.flatnonzero(ds.y != NORMAL)
    if len(normal) == 0 or len(attack) == 0:
        raise EmptyClass("both Normal and Attack samples are required to balance")
    small, big = sorted((normal, attack), key=len)
    if mode.startswith("under"):
        keep = np.concatenate([small, rng.choice(big, size=len(small), replace=False)])
    else:
        extra = rng.choice(small, size=len(big) - len(small), replace=True)
        keep = np.concatenate([big, small, extra])
    return ds.subset(np.sort(keep, kind="stable"))


# --- KNN --------------------------------------------------------------------


@dataclass
class KnnModel:
    X: np.ndarray
    codes: np.ndarray
    labels: tuple[str, ...]
    k: int = DEFAULT_K
    kind: str = field(default="knn", init=False)

    def predict(self, V, chunk: int = 256) -> list[str]:
        V = _as_matrix(V)
        out: list[str] = []
        sq_train = np.einsum("ij,ij->i", self.X, self.X)
        for start in range(0, len(V), chunk):
            Q = V[start:start + chunk]
            sq_q = np.einsum("ij,ij->i", Q, Q)
            # fast squared distances, only used to shortlist candidates
            approx = sq_train[None, :] + sq_q[:, None] - 2.0 * (Q @ self.X.T)
            for q, row, qn in zip(Q, approx, sq_q):
                out.append(self.labels[self._predict_one(q, row, qn, sq_train)])
        return out

    def _predict_one(self, q, approx, q_norm, sq_train) -> int:
        k = self.k
        if k < len(approx):
            kth = np.partition(approx, k - 1)[k - 1]
            slack = 1e-9 * (q_norm + sq_train.max()) + 1e-12
            cand = np.flatnonzero(approx <= kth + slack)
        else:
            cand = np.arange(len(approx))
        diff = self.X[cand] - q
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        codes = self.codes[cand]
        # distance first, label order second: the neighbour set depends only on
        # the multiset of (distance, label), not on training-row order
        order = np.lexsort((codes, dist))[:k]
        n_labels = len(self.labels)
        votes = np.bincount(codes[order], minlength=n_labels)
        sums = np.bincount(codes[order], weights=dist[order], minlength=n_labels)
        best = None
        for c in range(n_labels):
            if votes[c] == 0:
                continue
            key = (-votes[c], sums[c], c)
            if best is None or key < best:
                best = key
        return best[2]


def knn_fit(train: LabeledDataset, k: int = DEFAULT_K) -> KnnModel:
    if len(train) == 0:
        raise EmptyTrainingSet("KNN needs at least one training vector")
    if k < 1 or k > len(train):
        raise ValueError(f"k must be in 1..{len(train)}, got {k}")
    return KnnModel(train.X.copy(), train.codes(), train.labels, k)


def knn_predict(model: KnnModel, v) -> str:
    return model.predict(v)[0]


# --- outlier scorers --------------------------------------------------------


def _training_matrix(X, minimum: int) -> np.ndarray:
    X = _as_matrix(X)
    if len(X) < minimum:
        raise TooFewSamples(f"need at least {minimum} training vectors, got {len(X)}")
    return X


class _Scorer:
    threshold: Optional[float]

    def score(self, V) -> np.ndarray:
        raise NotImplementedError

    def _set_threshold(self, X, contamination: float) -> None:
        # scores above the (1 - contamination) training quantile are flagged
        self.threshold = float(np.quantile(self.score(X), 1.0 - contamination))

    def predict(self, V) -> np.ndarray:
        """True where the score exceeds the fitted threshold."""
        return self.score(V) > self.threshold


@dataclass
class MndModel(_Scorer):
    mean: np.ndarray
    cov: np.ndarray
    ridge: float = DEFAULT_RIDGE
    threshold: Optional[float] = None
    kind: str = field(default="mnd", init=False)

    def __post_init__(self):
        try:
            self._chol = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError:
            raise SingularCovariance("regularised covariance is not positive definite; "
                                     "increase the ridge") from None
        if not np.all(np.isfinite(self._chol)) or np.min(np.diag(self._chol)) <= 0:
            raise SingularCovariance("regularised covariance is singular")

    def score(self, V) -> np.ndarray:
        R = _as_matrix(V) - self.mean
        Z = solve_triangular(self._chol, R.T, lower=True, check_finite=False)
        return np.einsum("ij,ij->j", Z, Z)


def mnd_fit(normal, ridge: float = DEFAULT_RIDGE,
            contamination: float = DEFAULT_CONTAMINATION) -> MndModel:
    """Gaussian fit: sample mean, sample covariance + ridge * I."""
    if ridge <= 0:
        raise ValueError("ridge must be positive")
    X = _training_matrix(normal, 2)
    mu = X.mean(axis=0)
    Xc = X - mu
    cov = Xc.T @ Xc / (len(X) - 1)
    cov[np.diag_indices_from(cov)] += ridge
    model = MndModel(mu, cov, ridge)
    model._set_threshold(X, contamination)
    return model


def mnd_score(model: MndModel, v) -> np.ndarray:
    return model.score(v)


@dataclass
class PcaModel(_Scorer):
    mean: np.ndarray
    components: np.ndarray  # (k, dim), orthonormal rows
    explained: np.ndarray
    threshold: Optional[float] = None
    kind: str = field(default="pca", init=False)

    @property
    def k(self) -> int:
        return len(self.components)

    def score(self, V) -> np.ndarray:
        R = _as_matrix(V) - self.mean
        resid = R - (R @ self.components.T) @ self.components
        return np.einsum("ij,ij->i", resid, resid)


def pca_fit(normal, k: Optional[int] = None, variance: float = DEFAULT_VARIANCE,
            contamination: float = DEFAULT_CONTAMINATION) -> PcaModel:
    """Keep ``k`` leading eigenvectors, or the fewest explaining ``variance`` of the total."""
    X = _training_matrix(normal, 1)
    n, dim = X.shape
    if np.all(X == X[0]):
        raise DegenerateData("all training vectors are identical")
    mu = X.mean(axis=0)
    Xc = X - mu
    cov = Xc.T @ Xc / max(n - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    evals, evecs = evals[::-1].clip(min=0.0), evecs[:, ::-1]
    if k is None:
        if not 0 < variance <= 1:
            raise ValueError("variance fraction must be in (0, 1]")
        frac = np.cumsum(evals) / evals.sum()
        k = int(np.searchsorted(frac, variance - 1e-12) + 1)
        k = min(k, dim)
    elif not 1 <= k <= min(dim, n):
        raise ValueError(f"k must be in 1..{min(dim, n)}, got {k}")
    model = PcaModel(mu, evecs[:, :k].T.copy(), evals[:k].copy())
    model._set_threshold(X, contamination)
    return model


def pca_score(model: PcaModel, v) -> np.ndarray:
    return model.score(v)


@dataclass
class HbosModel(_Scorer):
    lo: np.ndarray
    hi: np.ndarray
    mass: np.ndarray  # (dim, bins), already floored
    floor: float = DEFAULT_FLOOR
    threshold: Optional[float] = None
    kind: str = field(default="hbos", init=False)

    @property
    def bins(self) -> int:
        return self.mass.shape[1]

    def _bin_index(self, X: np.ndarray) -> np.ndarray:
        width = self.hi - self.lo
        safe = np.where(width > 0, width, 1.0)
        idx = np.floor((X - self.lo) / safe * self.bins).astype(np.int64)
        return np.clip(idx, 0, self.bins - 1)

    def score(self, V) -> np.ndarray:
        V = _as_matrix(V)
        inside = (V >= self.lo) & (V <= self.hi)
        idx = self._bin_index(V)
        dens = np.take_along_axis(self.mass[None, :, :], idx[:, :, None], axis=2)[:, :, 0]
        dens = np.where(inside, dens, self.floor)
        return -np.log(dens).sum(axis=1)


def hbos_fit(normal, bins: int = DEFAULT_BINS, floor: float = DEFAULT_FLOOR,
             contamination: float = DEFAULT_CONTAMINATION) -> HbosModel:
    """Equal-width histogram per dimension over the training range; masses floored at ``floor``."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if not 0 < floor <= 1:
        raise ValueError("floor must be in (0, 1]")
    X = _training_matrix(normal, 1)
    n, dim = X.shape
    model = HbosModel(X.min(axis=0), X.max(axis=0), np.zeros((dim, bins)), floor)
    idx = model._bin_index(X)
    flat = (np.arange(dim)[None, :] * bins + idx).ravel()
    counts = np.bincount(flat, minlength=dim * bins).reshape(dim, bins)
    model.mass = np.maximum(counts / n, floor)
    model._set_threshold(X, contamination)
    return model


def hbos_score(model: HbosModel, v) -> np.ndarray:
    return model.score(v)


OutlierModel = Union[MndModel, PcaModel, HbosModel]
Model = Union[KnnModel, MndModel, PcaModel, HbosModel]
DETECTORS = ("knn", "mnd", "pca", "hbos")


# --- persistence ------------------------------------------------------------


def save_model(model: Model, path) -> None:
    """Write ``model`` as an .npz archive with a JSON ``meta`` entry (format_version, kind, params)."""
    meta = {"format_version": FORMAT_VERSION, "kind": model.kind}
    if isinstance(model, KnnModel):
        arrays = {"X": model.X, "codes": model.codes}
        meta.update(k=model.k, labels=list(model.labels))
    elif isinstance(model, MndModel):
        arrays = {"mean": model.mean, "cov": model.cov}
        meta.update(ridge=model.ridge, threshold=model.threshold)
    elif isinstance(model, PcaModel):
        arrays = {"mean": model.mean, "components": model.components, "explained": model.explained}
        meta.update(threshold=model.threshold)
    elif isinstance(model, HbosModel):
        arrays = {"lo": model.lo, "hi": model.hi, "mass": model.mass}
        meta.update(floor=model.floor, threshold=model.threshold)
    else:
        raise TypeError(f"cannot save {type(model).__name__}")
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)


def load_model(path) -> Model:
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            arrays = {name: z[name] for name in z.files if name != "meta"}
    except (OSError, ValueError, KeyError) as exc:
        raise FormatMismatch(f"{path}: not a saved model ({exc})") from None
    if meta.get("format_version") != FORMAT_VERSION:
        raise FormatMismatch(f"{path}: unsupported model format version {meta.get('format_version')!r}")
    kind = meta.get("kind")
    if kind == "knn":
        return KnnModel(arrays["X"], arrays["codes"], tuple(meta["labels"]), meta["k"])
    if kind == "mnd":
        return MndModel(arrays["mean"], arrays["cov"], meta["ridge"], meta["threshold"])
    if kind == "pca":
        return PcaModel(arrays["mean"], arrays["components"], arrays["explained"], meta["threshold"])
    if kind == "hbos":
        return HbosModel(arrays["lo"], arrays["hi"], arrays["mass"], meta["floor"], meta["threshold"])
    raise FormatMismatch(f"{path}: unknown model kind {kind!r}")
