"""Synthetic ring-membership task: do two ring atoms share a smallest ring?"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .model import MolFeatures, PagtnConfig, bind_params, collate, init_params, node_embeddings
from .molgraph import perceive_rings
from .smiles import MolGraph
from .training import DataError, LCG64, TrainConfig, compute_metric, make_folds

__all__ = [
    "RingPairSample",
    "RingTaskResult",
    "candidate_pairs",
    "init_pair_head",
    "generate_ring_dataset",
    "write_pairs_csv",
    "pair_logits",
    "train_pair_classifier",
]


@dataclass(frozen=True)
class RingPairSample:
    molecule: int
    i: int
    j: int
    label: int


def candidate_pairs(g: MolGraph) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """All (same-ring, different-ring) pairs ``i < j`` of ring atoms."""
    rings = perceive_rings(g)
    member = rings.atom_rings(g.n_atoms)
    ring_atoms = [a for a in range(g.n_atoms) if member[a]]
    same, diff = [], []
    for x, i in enumerate(ring_atoms):
        for j in ring_atoms[x + 1 :]:
            (same if member[i] & member[j] else diff).append((i, j))
    return same, diff


def generate_ring_dataset(molecules: list[MolGraph], seed: int = 0, per_class: int = 5, min_rings: int = 2) -> list[RingPairSample]:
    """Up to ``per_class`` same-ring and different-ring pairs per molecule.

    Only molecules with at least ``min_rings`` perceived rings contribute.
    Pairs are drawn without replacement with ``LCG64(seed)``, molecules in
    input order.
    """
    rng = LCG64(seed)
    out: list[RingPairSample] = []
    qualifying = 0
    for m, g in enumerate(molecules):
        if len(perceive_rings(g).rings) < min_rings:
            continue
        qualifying += 1
        same, diff = candidate_pairs(g)
        for label, pool in ((1, same), (0, diff)):
            for i, j in rng.shuffle(pool)[:per_class]:
                out.append(RingPairSample(m, i, j, label))
    if qualifying == 0:
        raise DataError(f"no molecule has at least {min_rings} rings")
    return out


def write_pairs_csv(path, pairs: list[RingPairSample]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["molecule_index", "i", "j", "label"])
        for s in pairs:
            w.writerow([s.molecule, s.i, s.j, s.label])


def init_pair_head(config: PagtnConfig, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed + 7919)
    f_m, hidden = config.dim, config.hidden
    lim1 = np.sqrt(6.0 / (f_m + hidden))
    lim2 = np.sqrt(6.0 / (hidden + 1))
    return {
        "pair.W1": rng.uniform(-lim1, lim1, (f_m, hidden)),
        "pair.b1": np.zeros(hidden),
        "pair.W2": rng.uniform(-lim2, lim2, (hidden, 1)),
        "pair.b2": np.zeros(1),
    }


def _selector(pairs_per_mol: list[list[tuple[int, int]]], n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    P = max(1, max(len(p) for p in pairs_per_mol))
    sel = np.zeros((len(pairs_per_mol), P, n_nodes))
    valid = np.zeros((len(pairs_per_mol), P), dtype=bool)
    for b, pairs in enumerate(pairs_per_mol):
        for k, (i, j) in enumerate(pairs):
            sel[b, k, i] += 1.0
            sel[b, k, j] += 1.0
            valid[b, k] = True
    return sel, valid


def pair_logits(feats: list[MolFeatures], pairs_per_mol, params, config: PagtnConfig, tape: ad.Tape | None = None):
    """Logits ``MLP(h_i + h_j)`` for each molecule's pairs, shape ``(B, P)``.

    Returns the logits and the validity mask for the padded pair slots.
    """
    tape = tape or ad.Tape()
    batch = collate(feats)
    h = node_embeddings(batch, params, config, tape)
    sel, valid = _selector(pairs_per_mol, batch.x.shape[1])
    rep = ad.matmul(tape.constant(sel), h)
    hidden = ad.relu(ad.add(ad.matmul(rep, _get(tape, params, "pair.W1")), _get(tape, params, "pair.b1")))
    logit = ad.add(ad.matmul(hidden, _get(tape, params, "pair.W2")), _get(tape, params, "pair.b2"))
    return ad.reshape(logit, valid.shape), valid


def _get(tape, params, name):
    v = params[name]
    return v if isinstance(v, ad.Tensor) else tape.constant(v)


@dataclass
class RingTaskResult:
    accuracy: float
    auc: float
    valid_auc: float
    best_epoch: int
    history: list[dict]
    n_molecules: int
    n_pairs: int
    params: dict[str, np.ndarray]


def _grouped(pairs: list[RingPairSample]) -> dict[int, list[RingPairSample]]:
    groups: dict[int, list[RingPairSample]] = {}
    for s in pairs:
        groups.setdefault(s.molecule, []).append(s)
    return groups


def _scores(mol_ids, groups, feats, params, config, batch_size=32):
    scores, labels = [], []
    for k in range(0, len(mol_ids), batch_size):
        ids = mol_ids[k : k + batch_size]
        pairs = [[(s.i, s.j) for s in groups[m]] for m in ids]
        logits, valid = pair_logits([feats[m] for m in ids], pairs, params, config)
        scores.append(logits.value[valid])
        labels.extend(s.label for m in ids for s in groups[m])
    return np.concatenate(scores), np.array(labels, dtype=np.float64)


def train_pair_classifier(
    feats: list[MolFeatures],
    pairs: list[RingPairSample],
    config: PagtnConfig,
    train_config: TrainConfig | None = None,
    split_seed: int = 0,
    on_epoch=None,
) -> RingTaskResult:
    """Train backbone and pair head end to end on a molecule-level 80:10:10 split.

    Early stopping uses validation AUC; the reported accuracy (threshold 0.5
    on the sigmoid, i.e. logit > 0) and AUC are on the test molecules.
    """
    tc = train_config or TrainConfig()
    labels = {s.label for s in pairs}
    if labels != {0, 1}:
        raise DataError("ring dataset needs both labels")
    groups = _grouped(pairs)
    mol_ids = sorted(groups)
    fold = make_folds(len(mol_ids), 1, split_seed)[0]
    train_ids = [mol_ids[k] for k in fold.train]
    valid_ids = sorted(mol_ids[k] for k in fold.valid)
    test_ids = sorted(mol_ids[k] for k in fold.test)

    params = init_params(config, tc.seed)
    for name in ("readout", "head.W1", "head.b1", "head.W2", "head.b2"):
        params.pop(name)
    params.update(init_pair_head(config, tc.seed))
    opt = ad.Adam(tc.lr, tc.beta1, tc.beta2, tc.eps)
    rng = np.random.default_rng(tc.seed)
    sizes = {m: feats[m].n_atoms for m in mol_ids}

    history = []
    best = (-math.inf, 0, {k: v.copy() for k, v in params.items()})
    since_best = 0
    for epoch in range(1, tc.epochs + 1):
        order = [train_ids[k] for k in rng.permutation(len(train_ids))]
        chunk = tc.batch_size * 8
        batches = []
        for start in range(0, len(order), chunk):
            block = sorted(order[start : start + chunk], key=sizes.get) if tc.bucket else order[start : start + chunk]
            batches.extend(block[k : k + tc.batch_size] for k in range(0, len(block), tc.batch_size))
        total = 0.0
        for bi in rng.permutation(len(batches)):
            ids = batches[bi]
            tape = ad.Tape()
            bound = bind_params(tape, params)
            pair_lists = [[(s.i, s.j) for s in groups[m]] for m in ids]
            y = np.zeros((len(ids), max(len(p) for p in pair_lists)))
            for b, m in enumerate(ids):
                for k, s in enumerate(groups[m]):
                    y[b, k] = s.label
            logits, valid = pair_logits([feats[m] for m in ids], pair_lists, bound, config, tape)
            loss = ad.binary_cross_entropy_with_logits(logits, y, valid / valid.sum())
            tape.backward(loss)
            opt.step(params, {k: t.grad for k, t in bound.items() if t.grad is not None})
            total += float(loss.value)
        s, l = _scores(valid_ids, groups, feats, params, config)
        valid_auc = compute_metric("auc", s, l)
        record = {"epoch": epoch, "train_loss": total / max(len(batches), 1), "valid_auc": valid_auc,
                  "valid_accuracy": float(np.mean((s > 0) == (l > 0.5)))}
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
        if valid_auc > best[0]:
            best = (valid_auc, epoch, {k: v.copy() for k, v in params.items()})
            since_best = 0
        else:
            since_best += 1
            if tc.patience and since_best >= tc.patience:
                break

    valid_auc, best_epoch, best_params = best
    s, l = _scores(test_ids, groups, feats, best_params, config)
    return RingTaskResult(
        accuracy=float(np.mean((s > 0) == (l > 0.5))),
        auc=compute_metric("auc", s, l),
        valid_auc=valid_auc,
        best_epoch=best_epoch,
        history=history,
        n_molecules=len(mol_ids),
        n_pairs=len(pairs),
        params=best_params,
    )
