"""Sample ingestion, per-example losses, pooling and cross-fitting folds.

Domain convention used throughout the package: ``0`` marks the training
distribution P and ``1`` the target distribution Q, so the pooled domain
vector doubles as the classification label ``T``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from os import PathLike
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .exceptions import SchemaError

logger = logging.getLogger(__name__)

TRAIN_P = 0
TARGET_Q = 1

LOG_LOSS_EPS = 1e-12

_DOMAIN_NAMES = {"train": TRAIN_P, "p": TRAIN_P, "target": TARGET_Q, "q": TARGET_Q}


def _domain_code(domain) -> int:
    if isinstance(domain, str):
        try:
            return _DOMAIN_NAMES[domain.lower()]
        except KeyError:
            raise SchemaError(f"unknown domain {domain!r}; use 'train' or 'target'") from None
    if domain in (TRAIN_P, TARGET_Q):
        return int(domain)
    raise SchemaError(f"unknown domain {domain!r}; use 0 (train) or 1 (target)")


@dataclass(frozen=True)
class LossSpec:
    """How to obtain the per-example loss from a table.

    Build one with the constructors rather than by hand, e.g.
    ``LossSpec.zero_one("y", "pred")``.
    """

    kind: str
    column: str | None = None
    label_col: str | None = None
    pred_col: str | None = None

    KINDS = ("precomputed", "zero_one", "squared", "log_loss")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise SchemaError(f"unknown loss kind {self.kind!r}")
        if self.kind == "precomputed" and not self.column:
            raise SchemaError("precomputed loss needs a column name")
        if self.kind != "precomputed" and not (self.label_col and self.pred_col):
            raise SchemaError(f"{self.kind} loss needs label and prediction columns")

    @classmethod
    def precomputed(cls, column: str) -> "LossSpec":
        return cls("precomputed", column=column)

    @classmethod
    def zero_one(cls, label_col: str, pred_col: str) -> "LossSpec":
        return cls("zero_one", label_col=label_col, pred_col=pred_col)

    @classmethod
    def squared(cls, label_col: str, pred_col: str) -> "LossSpec":
        return cls("squared", label_col=label_col, pred_col=pred_col)

    @classmethod
    def log_loss(cls, label_col: str, prob_col: str) -> "LossSpec":
        return cls("log_loss", label_col=label_col, pred_col=prob_col)

    @property
    def columns(self) -> list[str]:
        if self.kind == "precomputed":
            return [self.column]
        return [self.label_col, self.pred_col]

    @property
    def is_zero_one(self) -> bool:
        return self.kind == "zero_one"

    def compute(self, values: Mapping[str, np.ndarray]) -> np.ndarray:
        """Per-example losses from already-parsed numeric columns."""
        if self.kind == "precomputed":
            return np.asarray(values[self.column], dtype=float)
        y = np.asarray(values[self.label_col], dtype=float)
        pred = np.asarray(values[self.pred_col], dtype=float)
        if self.kind == "zero_one":
            return (y != pred).astype(float)
        if self.kind == "squared":
            return (y - pred) ** 2
        prob = np.clip(pred, LOG_LOSS_EPS, 1.0 - LOG_LOSS_EPS)
        return -(y * np.log(prob) + (1.0 - y) * np.log1p(-prob))

    def to_dict(self) -> dict:
        return {k: v for k, v in
                {"kind": self.kind, "column": self.column,
                 "label_col": self.label_col, "pred_col": self.pred_col}.items()
                if v is not None}


@dataclass(frozen=True)
class DomainSample:
    """Examples from one distribution, stored column-wise.

    ``features`` is the ``(n, d)`` matrix of decomposition features, which need
    not match whatever features the evaluated model consumed.
    """

    features: np.ndarray
    loss: np.ndarray
    domain: int
    feature_names: tuple[str, ...] = ()
    extra: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        if features.ndim == 1:
            features = features[:, None]
        loss = np.asarray(self.loss, dtype=float).ravel()
        if features.ndim != 2 or features.shape[1] < 1:
            raise SchemaError("features must be a 2-D array with at least one column")
        if features.shape[0] != loss.shape[0]:
            raise SchemaError(
                f"features have {features.shape[0]} rows but loss has {loss.shape[0]}")
        if not np.all(np.isfinite(loss)):
            raise SchemaError("losses must be finite")
        if not np.all(np.isfinite(features)):
            raise SchemaError("features must be finite")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "loss", loss)
        object.__setattr__(self, "domain", _domain_code(self.domain))
        names = tuple(self.feature_names) or tuple(f"z{j}" for j in range(features.shape[1]))
        if len(names) != features.shape[1]:
            raise SchemaError("feature_names length does not match feature dimension")
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "extra",
                           {k: np.asarray(v, dtype=float) for k, v in self.extra.items()})

    def __len__(self) -> int:
        return self.loss.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def read_frame(path: str | PathLike) -> pd.DataFrame:
    """Read a UTF-8 CSV with a header row, keeping every cell as a string."""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError:
        raise SchemaError(f"file not found: {path}") from None
    except pd.errors.EmptyDataError:
        raise SchemaError(f"{path}: file is empty") from None
    if frame.shape[0] == 0:
        raise SchemaError(f"{path}: no data rows")
    frame.columns = [c.strip() for c in frame.columns]
    return frame


def one_hot_encode(frames: Sequence[pd.DataFrame], columns: Sequence[str]) -> tuple[list[pd.DataFrame], list[str]]:
    """One-hot encode string columns consistently across several frames.

    Categories are the sorted union over all frames, so train and target
    samples end up with identical indicator columns. Returns the new frames
    and the names of the indicator columns, in order.
    """
    frames = [f.copy() for f in frames]
    new_names: list[str] = []
    for col in columns:
        for f in frames:
            if col not in f.columns:
                raise SchemaError(f"missing column {col!r}")
        cats = sorted(set().union(*(set(f[col].str.strip()) for f in frames)))
        for cat in cats:
            name = f"{col}={cat}"
            new_names.append(name)
            for f in frames:
                f[name] = (f[col].str.strip() == cat).astype(int).astype(str)
    return frames, new_names


def _parse_numeric(frame: pd.DataFrame, col: str, source: str) -> np.ndarray:
    raw = frame[col].str.strip()
    values = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(values) & (raw.to_numpy() != "")
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise SchemaError(
            f"{source}: column {col!r}, row {i + 1} (line {i + 2}): "
            f"cannot parse {frame[col].iloc[i]!r} as a finite number")
    return values


def sample_from_frame(
    frame: pd.DataFrame,
    feature_cols: Sequence[str],
    loss_spec: LossSpec,
    domain,
    na_policy: str = "error",
    extra_cols: Sequence[str] = (),
    source: str = "<frame>",
) -> DomainSample:
    if na_policy not in ("error", "drop-row"):
        raise SchemaError(f"unknown na policy {na_policy!r}")
    if not feature_cols:
        raise SchemaError("at least one feature column is required")
    needed = list(dict.fromkeys([*feature_cols, *loss_spec.columns, *extra_cols]))
    for col in needed:
        if col not in frame.columns:
            raise SchemaError(f"{source}: missing column {col!r}")
    parsed = {col: _parse_numeric(frame, col, source) for col in needed}
    missing = np.zeros(frame.shape[0], dtype=bool)
    for col in needed:
        missing |= np.isnan(parsed[col])
    if missing.any():
        if na_policy == "error":
            i = int(np.flatnonzero(missing)[0])
            col = next(c for c in needed if np.isnan(parsed[c][i]))
            raise SchemaError(
                f"{source}: empty cell in column {col!r}, row {i + 1} (line {i + 2}); "
                "use --na-policy drop-row to skip such rows")
        logger.info("%s: dropping %d rows with empty cells", source, int(missing.sum()))
        keep = ~missing
        parsed = {k: v[keep] for k, v in parsed.items()}
        if not keep.any():
            raise SchemaError(f"{source}: every row has an empty cell")
    features = np.column_stack([parsed[c] for c in feature_cols])
    loss = loss_spec.compute(parsed)
    return DomainSample(features, loss, domain, tuple(feature_cols),
                        {c: parsed[c] for c in extra_cols})


def load_csv(
    path: str | PathLike,
    feature_cols: Sequence[str],
    loss_spec: LossSpec,
    domain,
    na_policy: str = "error",
    extra_cols: Sequence[str] = (),
) -> DomainSample:
    """Load one domain's examples from a CSV file.

    Raises
    ------
    SchemaError
        If the file is missing or empty, a named column is absent, or a cell
        cannot be parsed as a finite number (the message names the row).
    """
    frame = read_frame(path)
    return sample_from_frame(frame, feature_cols, loss_spec, domain, na_policy,
                             extra_cols, source=str(path))


def assign_folds(domain: np.ndarray, n_folds: int, seed) -> np.ndarray:
    """Stratified fold ids: within each domain a seeded shuffle dealt round-robin."""
    rng = np.random.default_rng(seed)
    fold_id = np.empty(domain.shape[0], dtype=np.int64)
    for d in (TRAIN_P, TARGET_Q):
        idx = np.flatnonzero(domain == d)
        perm = rng.permutation(idx)
        fold_id[perm] = np.arange(perm.shape[0]) % n_folds
    return fold_id


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class PooledDataset:
    """Train and target examples stacked together with domain tags and folds.

    Immutable: arrays are copied and marked read-only on construction, so one
    instance can be shared by parallel workers.
    """

    features: np.ndarray
    loss: np.ndarray
    domain: np.ndarray
    fold_id: np.ndarray
    n_folds: int
    feature_names: tuple[str, ...] = ()
    extra: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n = self.loss.shape[0]
        if self.features.shape[0] != n or self.domain.shape[0] != n or self.fold_id.shape[0] != n:
            raise SchemaError("pooled arrays have inconsistent lengths")
        for name in ("features", "loss", "domain", "fold_id"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        object.__setattr__(self, "extra", {k: _readonly(v) for k, v in self.extra.items()})
        if self.n_p < 1 or self.n_q < 1:
            raise SchemaError("both domains need at least one example")
        for k in range(self.n_folds):
            in_fold = self.fold_id == k
            if not (in_fold & (self.domain == TRAIN_P)).any() or not (in_fold & (self.domain == TARGET_Q)).any():
                raise SchemaError(
                    f"fold {k} lacks examples from one domain "
                    f"(n_p={self.n_p}, n_q={self.n_q}, k_folds={self.n_folds})")

    @classmethod
    def from_arrays(cls, features, loss, domain, n_folds: int = 3, seed=0,
                    feature_names: Sequence[str] = (), extra: Mapping[str, np.ndarray] | None = None,
                    ) -> "PooledDataset":
        features = np.asarray(features, dtype=float)
        if features.ndim == 1:
            features = features[:, None]
        domain = np.asarray(domain)
        if not np.isin(domain, (TRAIN_P, TARGET_Q)).all():
            raise SchemaError("domain labels must be 0 (train) or 1 (target)")
        domain = domain.astype(np.int64)
        n_folds = int(n_folds)
        if n_folds < 1:
            raise SchemaError("k_folds must be >= 1")
        if n_folds == 1:
            warnings.warn("k_folds=1: the domain classifier is fit and evaluated on the same "
                          "data, which biases weights toward in-sample optimism", stacklevel=3)
        for d, n_d in ((TRAIN_P, (domain == TRAIN_P).sum()), (TARGET_Q, (domain == TARGET_Q).sum())):
            if 0 < n_d < n_folds:
                raise SchemaError(
                    f"{'train' if d == TRAIN_P else 'target'} sample has {n_d} examples, "
                    f"fewer than k_folds={n_folds}; some fold would be empty of that domain")
        fold_id = assign_folds(domain, n_folds, seed)
        names = tuple(feature_names) or tuple(f"z{j}" for j in range(features.shape[1]))
        return cls(features, np.asarray(loss, dtype=float), domain, fold_id, n_folds,
                   names, dict(extra or {}))

    @property
    def n(self) -> int:
        return self.loss.shape[0]

    @property
    def n_p(self) -> int:
        return int(np.count_nonzero(self.domain == TRAIN_P))

    @property
    def n_q(self) -> int:
        return int(np.count_nonzero(self.domain == TARGET_Q))

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray, seed=0) -> "PooledDataset":
        """Rows at ``indices`` (repeats allowed) with freshly assigned folds."""
        indices = np.asarray(indices)
        return PooledDataset.from_arrays(
            self.features[indices], self.loss[indices], self.domain[indices],
            self.n_folds, seed, self.feature_names,
            {k: v[indices] for k, v in self.extra.items()})


def pool(train: DomainSample, target: DomainSample, k_folds: int = 3, seed=0) -> PooledDataset:
    """Stack a train and a target sample and assign stratified folds."""
    if len(train) < 1 or len(target) < 1:
        raise SchemaError("both samples must be nonempty")
    if train.dim != target.dim:
        raise SchemaError(f"feature dimension mismatch: train has {train.dim}, target has {target.dim}")
    extra_keys = set(train.extra) & set(target.extra)
    return PooledDataset.from_arrays(
        np.vstack([train.features, target.features]),
        np.concatenate([train.loss, target.loss]),
        np.concatenate([np.zeros(len(train), dtype=np.int64), np.ones(len(target), dtype=np.int64)]),
        k_folds, seed, train.feature_names,
        {k: np.concatenate([train.extra[k], target.extra[k]]) for k in sorted(extra_keys)},
    )


def alpha_hat(pooled: PooledDataset) -> float:
    """Fraction of the pooled sample drawn from the target distribution."""
    return pooled.n_q / (pooled.n_p + pooled.n_q)
