"""PAGTN layers, molecule readout, and the GCN baseline.

All tensors carry optional leading batch axes: node features are
``(..., N, F)``, pair tensors ``(..., N, N, F)``. Molecules in a batch are
zero padded to a common ``N``; ``node_mask`` marks real atoms.
Weights act on row vectors (``h @ W``).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .molgraph import BOND_FEATURES, UNREACHABLE, all_pairs_shortest, bond_features, num_path_features, path_features, perceive_rings
from .smiles import NUM_NODE_FEATURES, MolGraph, node_features

__all__ = [
    "PagtnConfig",
    "MolFeatures",
    "GraphBatch",
    "featurize",
    "collate",
    "init_params",
    "bind_params",
    "pagtn_layers",
    "gcn_layers",
    "attention_mask",
    "attention_scores",
    "attention_probs",
    "layer_update",
    "molecule_embedding",
    "node_embeddings",
    "forward",
    "predict",
    "gcn_forward",
    "MODEL_KINDS",
]

MODEL_KINDS = ("pagtn", "pagtn-local", "gcn")


@dataclass
class PagtnConfig:
    layers: int = 5
    heads: int = 1
    dim: int = 64
    d: int = 3
    variant: str = "global"
    leaky_slope: float = 0.2
    n_outputs: int = 1
    head_hidden: int | None = None
    layer_norm: bool = False
    arch: str = "pagtn"

    def __post_init__(self):
        if self.layers < 1 or self.heads < 1 or self.dim < 1:
            raise ValueError("layers, heads and dim must be >= 1")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if self.variant not in ("global", "local"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.arch not in ("pagtn", "gcn"):
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.d < 1:
            raise ValueError("d must be >= 1")

    @classmethod
    def for_model(cls, model: str, **kw) -> "PagtnConfig":
        """Config for one of ``MODEL_KINDS``."""
        if model not in MODEL_KINDS:
            raise ValueError(f"unknown model {model!r}")
        return cls(
            arch="gcn" if model == "gcn" else "pagtn",
            variant="local" if model == "pagtn-local" else "global",
            **kw,
        )

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def hidden(self) -> int:
        return self.head_hidden or self.dim

    @property
    def n_path_features(self) -> int:
        return num_path_features(self.d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MolFeatures:
    """Everything the models read from one molecule."""

    x: np.ndarray
    p: np.ndarray
    dist: np.ndarray
    adj: np.ndarray
    bond_sum: np.ndarray
    graph: MolGraph | None = field(default=None, repr=False)

    @property
    def n_atoms(self) -> int:
        return self.x.shape[0]


def featurize(g: MolGraph, d: int = 3) -> MolFeatures:
    rings = perceive_rings(g)
    paths = all_pairs_shortest(g)
    pf = path_features(g, rings, d, paths)
    n = g.n_atoms
    adj = np.zeros((n, n))
    bond_sum = np.zeros((n, BOND_FEATURES))
    for k, b in enumerate(g.bonds):
        adj[b.begin, b.end] = adj[b.end, b.begin] = 1.0
        f = bond_features(g, k)
        bond_sum[b.begin] += f
        bond_sum[b.end] += f
    return MolFeatures(node_features(g), pf.p, pf.dist, adj, bond_sum, g)


@dataclass
class GraphBatch:
    x: np.ndarray
    p: np.ndarray
    dist: np.ndarray
    adj: np.ndarray
    bond_sum: np.ndarray
    node_mask: np.ndarray

    @property
    def size(self) -> int:
        return self.x.shape[0]


def collate(mols: list[MolFeatures]) -> GraphBatch:
    """Zero-pad molecules to the largest atom count in the list."""
    B = len(mols)
    N = max(m.n_atoms for m in mols)
    f_n = mols[0].x.shape[1]
    f_p = mols[0].p.shape[2]
    x = np.zeros((B, N, f_n))
    p = np.zeros((B, N, N, f_p))
    dist = np.full((B, N, N), UNREACHABLE, dtype=np.int64)
    adj = np.zeros((B, N, N))
    bond_sum = np.zeros((B, N, BOND_FEATURES))
    node_mask = np.zeros((B, N), dtype=bool)
    for b, m in enumerate(mols):
        n = m.n_atoms
        x[b, :n] = m.x
        p[b, :n, :n] = m.p
        dist[b, :n, :n] = m.dist
        adj[b, :n, :n] = m.adj
        bond_sum[b, :n] = m.bond_sum
        node_mask[b, :n] = True
    return GraphBatch(x, p, dist, adj, bond_sum, node_mask)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(config: PagtnConfig, seed: int = 0, n_node_features: int = NUM_NODE_FEATURES) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases. Names are stable across runs."""
    rng = np.random.default_rng(seed)
    f_n, f_m, f_p, dh = n_node_features, config.dim, config.n_path_features, config.head_dim
    params = {"input": _glorot(rng, f_n, f_m)}
    for l in range(config.layers):
        if config.arch == "gcn":
            params[f"gcn{l}.self"] = _glorot(rng, f_m, f_m)
            params[f"gcn{l}.nbr"] = _glorot(rng, f_m + BOND_FEATURES, f_m)
            continue
        for k in range(config.heads):
            pre = f"layer{l}.head{k}"
            params[f"{pre}.S1"] = _glorot(rng, 2 * dh + f_p, dh)
            params[f"{pre}.S2"] = _glorot(rng, dh, 1)
            params[f"{pre}.H1"] = _glorot(rng, dh + f_p, dh)
            params[f"{pre}.H2"] = _glorot(rng, dh, dh)
    params["readout"] = _glorot(rng, f_m + f_n, f_m)
    params["head.W1"] = _glorot(rng, f_m, config.hidden)
    params["head.b1"] = np.zeros(config.hidden)
    params["head.W2"] = _glorot(rng, config.hidden, config.n_outputs)
    params["head.b2"] = np.zeros(config.n_outputs)
    return params


def attention_mask(dist: np.ndarray, node_mask: np.ndarray | None, variant: str, d: int) -> np.ndarray:
    """Which (i, j) each source ``i`` may attend to.

    Always excludes ``j == i`` and padding; ``local`` also drops pairs that
    are farther than ``d`` apart or disconnected.
    """
    dist = np.asarray(dist)
    n = dist.shape[-1]
    mask = ~np.eye(n, dtype=bool)
    if node_mask is not None:
        nm = np.asarray(node_mask, dtype=bool)
        mask = mask & nm[..., :, None] & nm[..., None, :]
    else:
        mask = np.broadcast_to(mask, dist.shape)
    if variant == "local":
        mask = mask & (dist != UNREACHABLE) & (dist <= d)
    return mask


def _head_slice(h: ad.Tensor, k: int, dh: int, heads: int) -> ad.Tensor:
    if heads == 1:
        return h
    return ad.take(h, (Ellipsis, slice(k * dh, (k + 1) * dh)))


def attention_scores(h, p, params, layer: int, head: int, config: PagtnConfig) -> ad.Tensor:
    """``s[i, j] = S2 . LeakyReLU(S1 [h_i; h_j; p_ij])`` for all ordered pairs.

    ``h`` is the head's slice of the node embeddings. ``S1`` is applied
    blockwise so the ``(N, N, 2*dh + F_p)`` concatenation is never built.
    The diagonal is computed but never used.
    """
    tape = h.tape
    dh = h.shape[-1]
    S1 = _param(tape, params, f"layer{layer}.head{head}.S1")
    S2 = _param(tape, params, f"layer{layer}.head{head}.S2")
    src = ad.matmul(h, ad.take(S1, slice(0, dh)))
    dst = ad.matmul(h, ad.take(S1, slice(dh, 2 * dh)))
    pair = ad.matmul(p, ad.take(S1, slice(2 * dh, None)))
    lead = h.shape[:-2]
    n = h.shape[-2]
    pre = ad.add(ad.add(ad.reshape(src, lead + (n, 1, -1)), ad.reshape(dst, lead + (1, n, -1))), pair)
    s = ad.matmul(ad.leaky_relu(pre, config.leaky_slope), S2)
    return ad.reshape(s, lead + (n, n))


def attention_probs(s, mask: np.ndarray) -> ad.Tensor:
    """Row-wise softmax over allowed targets; rows with none allowed are all zero."""
    return ad.masked_softmax(s, mask, axis=-1, allow_empty=True)


def layer_update(h, alpha, p, params, layer: int, head: int) -> ad.Tensor:
    """``relu(H2 h_i + sum_j alpha_ij H1 [h_j; p_ij])`` for one head.

    ``sum_j alpha_ij H1 [h_j; p_ij]`` splits into ``alpha @ (h H1_h)`` plus
    ``(sum_j alpha_ij p_ij) H1_p``.
    """
    tape = h.tape
    dh = h.shape[-1]
    H1 = _param(tape, params, f"layer{layer}.head{head}.H1")
    H2 = _param(tape, params, f"layer{layer}.head{head}.H2")
    lead = h.shape[:-2]
    n = h.shape[-2]
    from_nodes = ad.matmul(alpha, ad.matmul(h, ad.take(H1, slice(0, dh))))
    p_avg = ad.reshape(ad.matmul(ad.reshape(alpha, lead + (n, 1, n)), p), lead + (n, -1))
    from_paths = ad.matmul(p_avg, ad.take(H1, slice(dh, None)))
    return ad.relu(ad.add(ad.add(ad.matmul(h, H2), from_nodes), from_paths))


def molecule_embedding(h, x, params, node_mask: np.ndarray | None = None) -> ad.Tensor:
    """Sum over atoms of ``relu(W_M [h_i; x_i])``."""
    W = _param(h.tape, params, "readout")
    per_node = ad.relu(ad.matmul(ad.concat([h, x], axis=-1), W))
    if node_mask is not None:
        per_node = ad.mul(per_node, np.asarray(node_mask, dtype=np.float64)[..., None])
    return ad.sum(per_node, axis=-2)


def _mlp_head(hM, params) -> ad.Tensor:
    tape = hM.tape
    hidden = ad.relu(ad.add(ad.matmul(_as_matrix(hM), _param(tape, params, "head.W1")), _param(tape, params, "head.b1")))
    return ad.add(ad.matmul(hidden, _param(tape, params, "head.W2")), _param(tape, params, "head.b2"))


def _as_matrix(t: ad.Tensor) -> ad.Tensor:
    return ad.reshape(t, (1, -1)) if t.ndim == 1 else t


def _param(tape: ad.Tape, params, name: str) -> ad.Tensor:
    value = params[name]
    if isinstance(value, ad.Tensor):
        return value
    return tape.constant(value)


def bind_params(tape: ad.Tape, params: dict[str, np.ndarray], requires_grad: bool = True) -> dict[str, ad.Tensor]:
    """Put every parameter on ``tape`` as a leaf."""
    return {k: tape.leaf(v, requires_grad) for k, v in params.items()}


def pagtn_layers(h, p, mask, params, config: PagtnConfig, record: list | None = None) -> ad.Tensor:
    dh = config.head_dim
    for l in range(config.layers):
        outs = []
        for k in range(config.heads):
            hk = _head_slice(h, k, dh, config.heads)
            s = attention_scores(hk, p, params, l, k, config)
            alpha = attention_probs(s, mask)
            if record is not None:
                record.append(alpha.value)
            outs.append(layer_update(hk, alpha, p, params, l, k))
        h = outs[0] if len(outs) == 1 else ad.concat(outs, axis=-1)
        if config.layer_norm:
            h = ad.layer_norm(h)
    return h


def gcn_layers(h, adj, bond_sum, params, config: PagtnConfig) -> ad.Tensor:
    """``h_i <- relu(W_self h_i + sum_{j in N(i)} W_nbr [h_j; b_ij])``."""
    tape = h.tape
    f_m = config.dim
    for l in range(config.layers):
        W_nbr = _param(tape, params, f"gcn{l}.nbr")
        agg = ad.add(
            ad.matmul(adj, ad.matmul(h, ad.take(W_nbr, slice(0, f_m)))),
            ad.matmul(bond_sum, ad.take(W_nbr, slice(f_m, None))),
        )
        h = ad.relu(ad.add(ad.matmul(h, _param(tape, params, f"gcn{l}.self")), agg))
        if config.layer_norm:
            h = ad.layer_norm(h)
    return h


def node_embeddings(batch: GraphBatch | MolFeatures, params, config: PagtnConfig, tape: ad.Tape | None = None, record: list | None = None) -> ad.Tensor:
    """Final-layer node embeddings ``h^L`` for a molecule or a padded batch."""
    tape = tape or ad.Tape()
    node_mask = getattr(batch, "node_mask", None)
    x = tape.constant(batch.x)
    h = ad.matmul(x, _param(tape, params, "input"))
    if config.arch == "gcn":
        return gcn_layers(h, batch.adj, batch.bond_sum, params, config)
    mask = attention_mask(batch.dist, node_mask, config.variant, config.d)
    return pagtn_layers(h, batch.p, mask, params, config, record)


def forward(batch: GraphBatch | MolFeatures, params, config: PagtnConfig, tape: ad.Tape | None = None, record: list | None = None) -> ad.Tensor:
    """Outputs of shape ``(B, n_outputs)`` for a batch, ``(1, n_outputs)`` for one molecule."""
    tape = tape or ad.Tape()
    h = node_embeddings(batch, params, config, tape, record)
    hM = molecule_embedding(h, tape.constant(batch.x), params, getattr(batch, "node_mask", None))
    return _mlp_head(hM, params)


def predict(g: MolGraph | MolFeatures, params, config: PagtnConfig) -> np.ndarray:
    """Regression value(s) or classification logit(s) for one molecule."""
    feats = g if isinstance(g, MolFeatures) else featurize(g, config.d)
    return forward(feats, params, config).value.reshape(-1)


def gcn_forward(g: MolGraph | MolFeatures, params, config: PagtnConfig) -> np.ndarray:
    if config.arch != "gcn":
        raise ValueError("gcn_forward needs a config with arch='gcn'")
    return predict(g, params, config)
