"""Central finite-difference checks for every autodiff op and the full models."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .model import PagtnConfig, bind_params, featurize, forward, init_params
from .smiles import parse_smiles

__all__ = ["CheckResult", "check_gradients", "op_cases", "model_cases", "run_suite"]

EPS = 1e-5
TOL = 1e-4
# gradients below this magnitude are compared absolutely
FLOOR = 1e-6


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    n_checked: int

    @property
    def ok(self) -> bool:
        return self.max_rel_err < TOL


def _rel(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), FLOOR)


def check_gradients(
    fn: Callable[[ad.Tape, dict[str, ad.Tensor]], ad.Tensor],
    inputs: dict[str, np.ndarray],
    rng: np.random.Generator,
    max_entries: int | None = None,
    eps: float = EPS,
) -> tuple[float, int]:
    """Compare tape gradients of ``fn`` with central differences.

    ``fn`` builds a scalar from leaves bound on a fresh tape. When
    ``max_entries`` is set, that many entries are sampled across all inputs.
    At a kink of a piecewise-linear op the two one-sided differences
    disagree; the analytic value is accepted if it matches either side.
    """
    tape = ad.Tape()
    leaves = {k: tape.leaf(v) for k, v in inputs.items()}
    tape.backward(fn(tape, leaves))
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.value)) for k, t in leaves.items()}

    def value(vals):
        t = ad.Tape()
        return float(fn(t, {k: t.leaf(v, False) for k, v in vals.items()}).value)

    entries = [(k, idx) for k, v in inputs.items() for idx in np.ndindex(v.shape)]
    if max_entries is not None and len(entries) > max_entries:
        pick = rng.choice(len(entries), size=max_entries, replace=False)
        entries = [entries[i] for i in sorted(pick)]

    worst = 0.0
    base = value(inputs)
    for name, idx in entries:
        work = {k: v.copy() for k, v in inputs.items()}
        work[name][idx] += eps
        up = value(work)
        work[name][idx] -= 2 * eps
        down = value(work)
        a = float(analytic[name][idx])
        err = _rel(a, (up - down) / (2 * eps))
        if err >= TOL:
            err = min(err, _rel(a, (up - base) / eps), _rel(a, (base - down) / eps))
        worst = max(worst, err)
    return worst, len(entries)


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.uniform(margin, 1.5, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _weighted(tape, out: ad.Tensor, w: np.ndarray) -> ad.Tensor:
    return ad.sum(ad.mul(out, w))


def op_cases(seed: int) -> list[tuple[str, Callable, dict[str, np.ndarray]]]:
    """One randomly sized case per op, all drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    r = lambda *s: rng.normal(size=s)  # noqa: E731
    n, m, k, b = (int(v) for v in rng.integers(2, 6, size=4))
    cases = []

    W = r(n, k)
    cases.append(("matmul", lambda t, v: _weighted(t, ad.matmul(v["a"], v["b"]), W), {"a": r(n, m), "b": r(m, k)}))
    W3 = r(b, n, k)
    cases.append(("matmul_batched", lambda t, v: _weighted(t, ad.matmul(v["a"], v["b"]), W3), {"a": r(b, n, m), "b": r(m, k)}))
    cases.append(("matmul_stacked", lambda t, v: _weighted(t, ad.matmul(v["a"], v["b"]), W3), {"a": r(b, n, m), "b": r(b, m, k)}))
    Wa = r(n, m)
    cases.append(("add_broadcast", lambda t, v: _weighted(t, ad.add(v["a"], v["b"]), Wa), {"a": r(n, m), "b": r(m)}))
    cases.append(("sub", lambda t, v: _weighted(t, ad.sub(v["a"], v["b"]), Wa), {"a": r(n, m), "b": r(n, 1)}))
    cases.append(("mul", lambda t, v: _weighted(t, ad.mul(v["a"], v["b"]), Wa), {"a": r(n, m), "b": r(n, m)}))
    c = float(rng.normal())
    cases.append(("scalar_mul", lambda t, v: _weighted(t, ad.scalar_mul(v["a"], c), Wa), {"a": r(n, m)}))
    Wc = r(n, m + k)
    cases.append(("concat", lambda t, v: _weighted(t, ad.concat([v["a"], v["b"]], axis=1), Wc), {"a": r(n, m), "b": r(n, k)}))
    idx = rng.integers(0, n, size=n + 2)
    Wt = r(n + 2, m)
    cases.append(("take_repeat", lambda t, v: _weighted(t, ad.take(v["a"], idx), Wt), {"a": r(n, m)}))
    Ws = r(n, 1)
    cases.append(("slice", lambda t, v: _weighted(t, v["a"][:, 1:2], Ws), {"a": r(n, m)}))
    Wr = r(m, n)
    cases.append(("reshape", lambda t, v: _weighted(t, ad.reshape(v["a"], (m, n)), Wr), {"a": r(n, m)}))
    Wsum = r(n)
    cases.append(("row_sum", lambda t, v: _weighted(t, ad.row_sum(v["a"]), Wsum), {"a": r(n, m)}))
    Wsum0 = r(m)
    cases.append(("sum_axis0", lambda t, v: _weighted(t, ad.sum(v["a"], axis=0), Wsum0), {"a": r(n, m)}))
    cases.append(("relu", lambda t, v: _weighted(t, ad.relu(v["a"]), Wa), {"a": _away_from_zero(rng, (n, m))}))
    cases.append(("leaky_relu", lambda t, v: _weighted(t, ad.leaky_relu(v["a"], 0.2), Wa), {"a": _away_from_zero(rng, (n, m))}))
    mask = rng.random((n, m)) < 0.7
    mask[0] = False
    mask[1:, 0] = True
    cases.append(("masked_softmax", lambda t, v: _weighted(t, ad.masked_softmax(v["a"], mask, allow_empty=True), Wa), {"a": r(n, m)}))
    cases.append(("layer_norm", lambda t, v: _weighted(t, ad.layer_norm(v["a"]), Wa), {"a": r(n, m)}))
    target = r(n, m)
    target[0, 0] = np.nan
    weight = (~np.isnan(target)).astype(float)
    cases.append(("squared_error", lambda t, v: ad.squared_error(v["a"], target, weight), {"a": r(n, m)}))
    labels = (rng.random((n, m)) < 0.5).astype(float)
    cases.append(("bce_logits", lambda t, v: ad.binary_cross_entropy_with_logits(v["a"], labels), {"a": r(n, m) * 2}))
    cases.append(("reuse", lambda t, v: _weighted(t, ad.mul(ad.add(v["a"], v["a"]), v["a"]), Wa), {"a": r(n, m)}))
    return cases


MODEL_SMILES = ("CC(=O)N", "C1CC1O", "CC#N.O", "NC=O")


def model_cases(seed: int, n_params: int = 50):
    """Full-model cases on small molecules: loss = sum of outputs times a fixed weight."""
    rng = np.random.default_rng(seed)
    smi = MODEL_SMILES[seed % len(MODEL_SMILES)]
    cases = []
    for model, heads in (("pagtn", 1), ("pagtn", 2), ("pagtn-local", 1), ("gcn", 1)):
        config = PagtnConfig.for_model(model, heads=heads, d=2)
        feats = featurize(parse_smiles(smi), config.d)
        params = init_params(config, seed)
        w = rng.normal(size=(1, config.n_outputs))

        def fn(tape, leaves, feats=feats, config=config, w=w):
            return ad.sum(ad.mul(forward(feats, leaves, config, tape), w))

        label = f"{model}{'-k2' if heads > 1 else ''}[{smi}]"
        cases.append((label, fn, params))
    return cases


def run_suite(seed: int = 0, n_op_seeds: int = 6, n_model_seeds: int = 2, n_params: int = 50, log=None) -> list[CheckResult]:
    """Every op under several seeds plus the end-to-end models."""
    results = []
    for s in range(seed, seed + n_op_seeds):
        rng = np.random.default_rng(10_000 + s)
        for name, fn, inputs in op_cases(s):
            err, count = check_gradients(fn, inputs, rng)
            results.append(CheckResult(f"{name}#{s}", err, count))
            if log:
                log(results[-1])
    for s in range(seed, seed + n_model_seeds):
        rng = np.random.default_rng(20_000 + s)
        for name, fn, inputs in model_cases(s, n_params):
            err, count = check_gradients(fn, inputs, rng, max_entries=n_params)
            results.append(CheckResult(f"{name}#{s}", err, count))
            if log:
                log(results[-1])
    return results
