"""NetFlow dataset ingestion, scaling, splitting and a synthetic stand-in corpus."""

from __future__ import annotations

import json
import logging
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError, DataError, DimensionError
from .validation import check_features, check_labels

logger = logging.getLogger(__name__)

LABEL_NAMES = ("Normal", "HTTP flood", "TCP flood", "Brute force", "UDP flood")

# CICIoT2022 class distribution
REFERENCE_CLASS_COUNTS = {
    "Normal": 2_616_853,
    "HTTP flood": 554_316,
    "TCP flood": 45_884,
    "Brute force": 12_257,
    "UDP flood": 6_561,
}
REFERENCE_PROPORTIONS = (0.80870, 0.17130, 0.01418, 0.00379, 0.00203)

# identifier-like columns that are never model features
DEFAULT_DROP_COLUMNS = (
    "Flow ID", "Src IP", "Dst IP", "Src Port", "Dst Port", "Timestamp",
    "Source IP", "Destination IP", "Source Port", "Destination Port",
)


def _norm(name: str) -> str:
    return re.sub(r"[\s_\-]+", " ", str(name).strip().lower())


class LabelMap:
    """Fixed bijection between class names and indices."""

    def __init__(self, names=LABEL_NAMES):
        self.names = tuple(names)
        self._index = {_norm(n): i for i, n in enumerate(self.names)}
        if len(self._index) != len(self.names):
            raise ConfigError("label names must be distinct")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name) -> int:
        try:
            return self._index[_norm(name)]
        except KeyError:
            raise DataError(f"unknown class label {name!r}; expected one of {list(self.names)}") from None

    def name(self, index: int) -> str:
        return self.names[index]

    def encode(self, names) -> np.ndarray:
        lookup = {raw: self.index(raw) for raw in pd.unique(np.asarray(names, dtype=object))}
        return np.array([lookup[v] for v in names], dtype=np.int64)


@dataclass
class FlowDataset:
    features: np.ndarray
    labels: np.ndarray
    label_names: tuple[str, ...] = LABEL_NAMES
    feature_names: tuple[str, ...] = ()
    rows_in: int = 0
    rows_dropped: int = 0

    def __post_init__(self):
        self.features = check_features(self.features, "features")
        self.labels = check_labels(self.labels, self.features.shape[0], len(self.label_names))
        if not self.feature_names:
            self.feature_names = tuple(f"f{i}" for i in range(self.features.shape[1]))
        if len(self.feature_names) != self.features.shape[1]:
            raise DimensionError("feature_names length does not match the feature columns")
        if not self.rows_in:
            self.rows_in = self.features.shape[0]

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def rows_kept(self) -> int:
        return self.n_rows

    def class_counts(self) -> dict[str, int]:
        counts = np.bincount(self.labels, minlength=len(self.label_names))
        return {n: int(c) for n, c in zip(self.label_names, counts)}

    def to_csv(self, path, label_column: str = "Label") -> None:
        frame = pd.DataFrame(self.features, columns=list(self.feature_names))
        frame[label_column] = [self.label_names[i] for i in self.labels]
        frame.to_csv(path, index=False, float_format="%.17g")


def load_netflow_csv(path, label_column: str = "Label", drop_columns=DEFAULT_DROP_COLUMNS,
                     label_map: LabelMap | None = None) -> FlowDataset:
    """Parse a CICFlowMeter-style CSV into a :class:`FlowDataset`.

    Identifier columns in ``drop_columns`` and any other non-numeric column are
    discarded; rows holding NaN or infinite values are dropped and counted.
    """
    label_map = label_map or LabelMap()
    try:
        frame = pd.read_csv(path, skipinitialspace=True, low_memory=False, float_precision="round_trip")
    except FileNotFoundError:
        raise DataError(f"input file {path} does not exist") from None
    except pd.errors.EmptyDataError:
        raise DataError(f"{path} is empty") from None
    frame.columns = [str(c).strip() for c in frame.columns]
    if label_column not in frame.columns:
        raise DataError(f"label column {label_column!r} not found in {path}")
    labels_raw = frame.pop(label_column)
    drop = {str(c) for c in (drop_columns or ())}
    frame = frame[[c for c in frame.columns if c not in drop]]
    numeric = frame.apply(pd.to_numeric, errors="coerce")
    # a column counts as numeric when its non-empty cells all parse
    keep = [c for c in frame.columns if numeric[c].notna().sum() == frame[c].notna().sum()]
    skipped = sorted(set(frame.columns) - set(keep))
    if skipped:
        logger.info("dropping non-numeric columns: %s", ", ".join(skipped))
    values = numeric[keep].to_numpy(dtype=np.float64)
    rows_in = values.shape[0]
    ok = np.all(np.isfinite(values), axis=1) & labels_raw.notna().to_numpy()
    dropped = int(rows_in - ok.sum())
    if dropped:
        logger.info("dropped %d rows with non-finite values", dropped)
    if not ok.any():
        raise DataError(f"{path} has no usable rows")
    labels = label_map.encode(labels_raw[ok].to_numpy())
    return FlowDataset(values[ok], labels, label_map.names, tuple(keep), rows_in, dropped)


def check_reference_class_counts(dataset: FlowDataset) -> dict[str, tuple[int, int]]:
    """Mismatches between ``dataset`` class counts and the published CICIoT2022 counts."""
    have = dataset.class_counts()
    return {n: (have.get(n, 0), want) for n, want in REFERENCE_CLASS_COUNTS.items() if have.get(n, 0) != want}


# scaling --------------------------------------------------------------------

class MinMaxScaler(TransformerMixin, BaseEstimator):
    """Per-column min-max scaling to [0, 1] fit on training rows only.

    Constant columns map to 0 and out-of-range values are clamped.
    """

    def fit(self, X, y=None):
        X = check_features(X)
        self.data_min_ = X.min(axis=0)
        self.data_max_ = X.max(axis=0)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "data_min_")
        X = check_features(X)
        if X.shape[1] != self.n_features_in_:
            raise DimensionError(f"scaler fit on {self.n_features_in_} columns, got {X.shape[1]}")
        span = self.data_max_ - self.data_min_
        safe = np.where(span > 0, span, 1.0)
        out = np.where(span > 0, (X - self.data_min_) / safe, 0.0)
        return np.clip(out, 0.0, 1.0)


def fit_scaler(train) -> MinMaxScaler:
    return MinMaxScaler().fit(train)


def apply_scaler(scaler: MinMaxScaler, data) -> np.ndarray:
    return scaler.transform(data)


# splitting ------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.20
    val_fraction_of_train: float = 0.10
    seed: int = 0
    stratify: bool = False

    def __post_init__(self):
        for name in ("test_fraction", "val_fraction_of_train"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {value}")


@dataclass
class Split:
    train_ids: np.ndarray
    val_ids: np.ndarray
    test_ids: np.ndarray
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "train_ids": self.train_ids.tolist(),
            "val_ids": self.val_ids.tolist(),
            "test_ids": self.test_ids.tolist(),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Split":
        doc = json.loads(Path(path).read_text())
        return cls(*(np.asarray(doc[k], dtype=np.int64) for k in ("train_ids", "val_ids", "test_ids")),
                   seed=doc.get("seed", 0))


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _cut(ids: np.ndarray, spec: SplitSpec):
    n_test = _round_half_up(len(ids) * spec.test_fraction)
    n_val = _round_half_up((len(ids) - n_test) * spec.val_fraction_of_train)
    return ids[n_test + n_val:], ids[n_test:n_test + n_val], ids[:n_test]


def split(dataset_or_n, spec: SplitSpec | None = None, labels=None) -> Split:
    """Seeded train/validation/test partition of row ids.

    ``test_fraction`` of the rows go to test; ``val_fraction_of_train`` of the
    remainder is held out for validation. Sizes use round-half-up.
    """
    spec = spec or SplitSpec()
    if isinstance(dataset_or_n, FlowDataset):
        n, labels = dataset_or_n.n_rows, dataset_or_n.labels if labels is None else labels
    else:
        n = int(dataset_or_n)
    if n < 10:
        raise DataError(f"need at least 10 rows to split, got {n}")
    rng = np.random.default_rng(spec.seed)
    if spec.stratify:
        if labels is None:
            raise ConfigError("stratified split needs labels")
        labels = np.asarray(labels)
        parts = [[], [], []]
        for c in np.unique(labels):
            ids = np.flatnonzero(labels == c)
            for bucket, chunk in zip(parts, _cut(rng.permutation(ids), spec)):
                bucket.append(chunk)
        train, val, test = (np.sort(np.concatenate(p)) for p in parts)
    else:
        train, val, test = (np.sort(p) for p in _cut(rng.permutation(n), spec))
    if min(len(train), len(val), len(test)) == 0:
        raise DataError(f"{n} rows are too few for non-empty train/val/test splits")
    return Split(train.astype(np.int64), val.astype(np.int64), test.astype(np.int64), spec.seed)


# synthetic corpus -----------------------------------------------------------

def class_counts_for(n: int, proportions) -> np.ndarray:
    """``round(n * p)`` per class, with any remainder given to the largest class."""
    p = np.asarray(proportions, dtype=np.float64)
    counts = np.array([_round_half_up(n * q) for q in p], dtype=np.int64)
    counts[np.argmax(p)] += n - counts.sum()
    return counts


def synth_blobs(n: int = 10_000, class_proportions=REFERENCE_PROPORTIONS, dim: int = 84,
                separation: float = 2.0, seed: int = 0, anisotropy: float = 1.0) -> FlowDataset:
    """Gaussian class clusters with the CICIoT2022 class imbalance.

    Class centres are standard-normal draws scaled by ``separation``; every
    point adds unit noise, stretched per-dimension by log-uniform factors up to
    ``anisotropy`` when that is above 1.
    """
    p = np.asarray(class_proportions, dtype=np.float64)
    if p.ndim != 1 or p.size < 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
        raise ConfigError(f"class proportions must be non-negative and sum to 1, got {p.sum():.8f}")
    if n < 1000:
        raise ConfigError(f"synthetic corpus needs n >= 1000, got {n}")
    if p.size > len(LABEL_NAMES):
        raise ConfigError(f"at most {len(LABEL_NAMES)} classes are supported")
    rng = np.random.default_rng(seed)
    counts = class_counts_for(n, p)
    centers = rng.standard_normal((p.size, dim)) * separation
    scales = np.exp(rng.uniform(0.0, np.log(max(anisotropy, 1.0)), size=dim))
    labels = np.repeat(np.arange(p.size), counts)
    features = centers[labels] + rng.standard_normal((n, dim)) * scales
    order = rng.permutation(n)
    return FlowDataset(features[order], labels[order], LABEL_NAMES, tuple(f"feature_{i}" for i in range(dim)))


# binary matrix format -------------------------------------------------------

_MATRIX_HEADER = struct.Struct("<4sHQQ")


def save_matrix(path, matrix) -> None:
    """``b"FMAT"``, u16 version, u64 rows, u64 cols, then f64 LE row-major."""
    m = np.ascontiguousarray(matrix, dtype="<f8")
    if m.ndim != 2:
        raise DimensionError(f"matrix must be 2-D, got shape {m.shape}")
    with open(path, "wb") as fh:
        fh.write(_MATRIX_HEADER.pack(b"FMAT", 1, m.shape[0], m.shape[1]))
        fh.write(m.tobytes())


def load_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, version, rows, cols = _MATRIX_HEADER.unpack_from(raw)
    if magic != b"FMAT" or version != 1:
        raise DataError(f"{path} is not a version-1 FMAT matrix file")
    if len(raw) != _MATRIX_HEADER.size + 8 * rows * cols:
        raise DataError(f"{path} size does not match its {rows}x{cols} header")
    return np.frombuffer(raw, dtype="<f8", offset=_MATRIX_HEADER.size).reshape(rows, cols).astype(np.float64)


def write_reduced_csv(path, latent, labels) -> None:
    latent = check_features(latent, "latent")
    frame = pd.DataFrame(latent, columns=[f"z{i}" for i in range(latent.shape[1])])
    frame["label"] = np.asarray(labels, dtype=np.int64)
    frame.to_csv(path, index=False, float_format="%.17g")


def read_reduced_csv(path) -> tuple[np.ndarray, np.ndarray]:
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except FileNotFoundError:
        raise DataError(f"reduced data file {path} does not exist") from None
    if "label" not in frame.columns:
        raise DataError(f"{path} lacks a label column")
    labels = frame.pop("label").to_numpy(dtype=np.int64)
    return check_features(frame.to_numpy(dtype=np.float64), "latent"), labels
