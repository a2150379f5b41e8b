"""Datasets, fold splits, metrics and the training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .model import MolFeatures, PagtnConfig, bind_params, collate, featurize, forward, init_params
from .smiles import SmilesError, parse_smiles

__all__ = [
    "Sample",
    "Dataset",
    "TaskSpec",
    "FoldSplit",
    "TrainConfig",
    "TrainResult",
    "DataError",
    "DivergenceError",
    "LCG64",
    "load_csv",
    "make_folds",
    "compute_metric",
    "roc_auc",
    "Normalizer",
    "train",
    "evaluate",
    "predict_dataset",
]

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    pass


@dataclass
class Sample:
    smiles: str
    targets: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        if np.all(np.isnan(self.targets)):
            raise DataError(f"sample {self.smiles!r} has no target values")


@dataclass
class Dataset:
    samples: list[Sample]
    features: list[MolFeatures]
    target_names: list[str] = field(default_factory=list)
    skipped: int = 0
    name: str = "data"

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def targets(self) -> np.ndarray:
        return np.stack([s.targets for s in self.samples])

    def subset(self, indices) -> "Dataset":
        idx = list(indices)
        return Dataset([self.samples[i] for i in idx], [self.features[i] for i in idx], self.target_names, 0, self.name)


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "regression"
    metric: str = "rmse"
    n_targets: int = 1
    normalize_targets: bool = True

    def __post_init__(self):
        if self.kind not in ("regression", "classification"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.metric not in ("mae", "rmse", "auc"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if (self.metric == "auc") != (self.kind == "classification"):
            raise ValueError(f"metric {self.metric} does not fit a {self.kind} task")

    @property
    def higher_is_better(self) -> bool:
        return self.metric == "auc"


def load_csv(path, smiles_column: str = "smiles", target_columns=None, d: int = 3, stereo: str = "ignore") -> Dataset:
    """Read a MoleculeNet-style CSV and featurize every parseable row.

    Blank target cells become NaN (missing). Rows whose SMILES fail to parse,
    or that have no target at all, are skipped and counted.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if smiles_column not in header:
            raise DataError(f"column {smiles_column!r} not in {path.name}")
        if target_columns is None:
            target_columns = [c for c in header if c != smiles_column][-1:]
        for c in target_columns:
            if c not in header:
                raise DataError(f"column {c!r} not in {path.name}")
        rows = list(reader)

    samples, feats, skipped = [], [], 0
    for row in rows:
        smi = (row[smiles_column] or "").strip()
        try:
            targets = [float(row[c]) if (row[c] or "").strip() else math.nan for c in target_columns]
            sample = Sample(smi, targets)
            feats.append(featurize(parse_smiles(smi, stereo=stereo), d))
        except (SmilesError, DataError, ValueError) as e:
            skipped += 1
            log.debug("skipping row %r: %s", smi, e)
            continue
        samples.append(sample)
    if skipped:
        log.info("%s: skipped %d of %d rows", path.name, skipped, len(rows))
    if not samples:
        raise DataError(f"no usable rows in {path}")
    return Dataset(samples, feats, list(target_columns), skipped, path.stem.lower())


class LCG64:
    """Knuth's MMIX linear congruential generator.

    ``state <- (6364136223846793005 * state + 1442695040888963407) mod 2**64``;
    each draw returns the new state's upper 32 bits. The initial state is
    ``seed mod 2**64``.
    """

    A = 6364136223846793005
    C = 1442695040888963407
    MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self.state = seed & self.MASK

    def next_u32(self) -> int:
        self.state = (self.A * self.state + self.C) & self.MASK
        return self.state >> 32

    def shuffle(self, items: list) -> list:
        """Fisher-Yates from the back: for i = n-1..1 swap i with next_u32() % (i+1)."""
        items = list(items)
        for i in range(len(items) - 1, 0, -1):
            j = self.next_u32() % (i + 1)
            items[i], items[j] = items[j], items[i]
        return items


@dataclass(frozen=True)
class FoldSplit:
    seed: int
    train: tuple[int, ...]
    valid: tuple[int, ...]
    test: tuple[int, ...]


def make_folds(n: int, n_folds: int = 10, base_seed: int = 0) -> list[FoldSplit]:
    """Random 80:10:10 splits; fold ``f`` shuffles with ``LCG64(base_seed + f)``.

    Validation and test each get ``floor(0.1 * n + 0.5)`` indices, taken from
    the end of the shuffled order (test last); training gets the rest.
    """
    if n < 10:
        raise DataError(f"need at least 10 samples for an 80:10:10 split, got {n}")
    n_small = int(0.1 * n + 0.5)
    n_train = n - 2 * n_small
    folds = []
    for f in range(n_folds):
        seed = base_seed + f
        order = LCG64(seed).shuffle(range(n))
        folds.append(
            FoldSplit(
                seed,
                tuple(order[:n_train]),
                tuple(order[n_train : n_train + n_small]),
                tuple(order[n_train + n_small :]),
            )
        )
    return folds


def roc_auc(scores, labels) -> float:
    """Mann-Whitney U / (n_pos * n_neg) with average ranks for ties."""
    from scipy.stats import rankdata

    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both classes present")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def compute_metric(kind: str, predictions, labels) -> float:
    """MAE, RMSE or AUC; NaN labels are ignored. Columns are averaged."""
    pred = np.asarray(predictions, dtype=np.float64)
    lab = np.asarray(labels, dtype=np.float64)
    if pred.shape != lab.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {lab.shape}")
    if pred.ndim == 1:
        pred, lab = pred[:, None], lab[:, None]
    if pred.shape[0] < 1:
        raise ValueError("need at least one prediction")
    values = []
    for t in range(pred.shape[1]):
        ok = ~np.isnan(lab[:, t])
        if not ok.any():
            continue
        e = pred[ok, t] - lab[ok, t]
        if kind == "mae":
            values.append(np.mean(np.abs(e)))
        elif kind == "rmse":
            values.append(np.sqrt(np.mean(e * e)))
        elif kind == "auc":
            values.append(roc_auc(pred[ok, t], lab[ok, t]))
        else:
            raise ValueError(f"unknown metric {kind!r}")
    if not values:
        raise ValueError("no labelled entries")
    return float(np.mean(values))


@dataclass
class Normalizer:
    """Per-target z-scoring fitted on training targets only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, targets: np.ndarray) -> "Normalizer":
        mean = np.nanmean(targets, axis=0)
        std = np.nanstd(targets, axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std)

    @classmethod
    def identity(cls, n_targets: int) -> "Normalizer":
        return cls(np.zeros(n_targets), np.ones(n_targets))

    def transform(self, y):
        return (y - self.mean) / self.std

    def inverse(self, z):
        return z * self.std + self.mean


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 20
    seed: int = 0
    bucket: bool = True


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    history: list[dict]
    best_epoch: int
    valid_metric: float
    test_metric: float | None
    normalizer: Normalizer
    model_config: PagtnConfig
    task: TaskSpec


def _batches(indices: list[int], sizes: np.ndarray, batch_size: int, rng: np.random.Generator, bucket: bool):
    order = [indices[k] for k in rng.permutation(len(indices))]
    if not bucket:
        return [order[k : k + batch_size] for k in range(0, len(order), batch_size)]
    # sort by atom count inside chunks of 8 batches, then shuffle the batches
    chunk = batch_size * 8
    batches = []
    for start in range(0, len(order), chunk):
        block = sorted(order[start : start + chunk], key=lambda i: sizes[i])
        batches.extend(block[k : k + batch_size] for k in range(0, len(block), batch_size))
    return [batches[k] for k in rng.permutation(len(batches))]


def _loss(out: ad.Tensor, y: np.ndarray, task: TaskSpec) -> ad.Tensor:
    """Average over targets of the per-target mean loss over observed entries."""
    observed = ~np.isnan(y)
    counts = observed.sum(axis=0)
    weight = np.where(observed, 1.0 / np.maximum(counts, 1), 0.0) / max(int((counts > 0).sum()), 1)
    if task.kind == "regression":
        return ad.squared_error(out, y, weight)
    return ad.binary_cross_entropy_with_logits(out, y, weight)


def predict_dataset(data: Dataset | list[MolFeatures], params, config: PagtnConfig, batch_size: int = 64) -> np.ndarray:
    """Raw model outputs (normalized space / logits), shape ``(n, n_outputs)``."""
    feats = data.features if isinstance(data, Dataset) else data
    order = np.argsort([f.n_atoms for f in feats], kind="stable")
    out = np.zeros((len(feats), config.n_outputs))
    for k in range(0, len(order), batch_size):
        idx = order[k : k + batch_size]
        out[idx] = forward(collate([feats[i] for i in idx]), params, config).value
    return out


def evaluate(data: Dataset, params, config: PagtnConfig, task: TaskSpec, normalizer: Normalizer | None = None) -> float:
    raw = predict_dataset(data, params, config)
    if task.kind == "regression" and normalizer is not None:
        raw = normalizer.inverse(raw)
    return compute_metric(task.metric, raw, data.targets)


def _is_better(a: float, b: float, task: TaskSpec) -> bool:
    return a > b if task.higher_is_better else a < b


def train(dataset: Dataset, task: TaskSpec, config: PagtnConfig, fold: FoldSplit, train_config: TrainConfig | None = None, on_epoch=None) -> TrainResult:
    """Minibatch Adam with early stopping on the validation metric.

    The returned params are those of the best validation epoch; the test
    metric is computed once, on those params.
    """
    tc = train_config or TrainConfig()
    if not fold.train:
        raise DataError("empty training split")
    config = replace(config, n_outputs=task.n_targets)
    train_idx = list(fold.train)
    targets = dataset.targets
    if task.kind == "regression" and task.normalize_targets:
        normalizer = Normalizer.fit(targets[train_idx])
    else:
        normalizer = Normalizer.identity(task.n_targets)
    y_all = normalizer.transform(targets) if task.kind == "regression" else targets

    params = init_params(config, tc.seed)
    opt = ad.Adam(tc.lr, tc.beta1, tc.beta2, tc.eps)
    rng = np.random.default_rng(tc.seed)
    sizes = np.array([f.n_atoms for f in dataset.features])
    valid = dataset.subset(fold.valid) if fold.valid else None

    history: list[dict] = []
    best_params = {k: v.copy() for k, v in params.items()}
    best_metric = math.nan
    best_epoch = 0
    since_best = 0
    for epoch in range(1, tc.epochs + 1):
        total, seen = 0.0, 0
        for idx in _batches(train_idx, sizes, tc.batch_size, rng, tc.bucket):
            tape = ad.Tape()
            bound = bind_params(tape, params)
            out = forward(collate([dataset.features[i] for i in idx]), bound, config, tape)
            loss = _loss(out, y_all[idx], task)
            if not np.isfinite(loss.value):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            tape.backward(loss)
            opt.step(params, {k: t.grad for k, t in bound.items() if t.grad is not None})
            total += float(loss.value) * len(idx)
            seen += len(idx)
        train_loss = total / seen
        if not all(np.all(np.isfinite(v)) for v in params.values()):
            raise DivergenceError(f"non-finite parameters after epoch {epoch}")
        if valid is not None:
            metric = evaluate(valid, params, config, task, normalizer)
        else:
            metric = -train_loss if task.higher_is_better else train_loss
        record = {"epoch": epoch, "train_loss": train_loss, "valid_metric": metric}
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
        if epoch == 1 or _is_better(metric, best_metric, task):
            best_metric, best_epoch, since_best = metric, epoch, 0
            best_params = {k: v.copy() for k, v in params.items()}
        else:
            since_best += 1
            if tc.patience and since_best >= tc.patience:
                break

    test_metric = None
    if fold.test:
        test_metric = evaluate(dataset.subset(fold.test), best_params, config, task, normalizer)
    return TrainResult(best_params, history, best_epoch, best_metric, test_metric, normalizer, config, task)
