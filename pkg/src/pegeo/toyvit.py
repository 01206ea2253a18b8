"""A deterministic, untrained toy vision transformer with pluggable positional schemes.

Pre-LayerNorm blocks with full (global) multi-head attention and a GELU MLP.
There is no CLS token. ``forward`` returns one token grid per layer, with
layer 0 being the patch embedding after absolute positional injection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import GridShape, InvalidArgument, TokenGrid
from .posenc import (AbsoluteTable, NoPositional, PositionalScheme, RelativeBiasTable, RotaryAngles,
                     build_learned_random, build_relative_bias, build_rotary, build_sinusoidal_2d,
                     rotate_pairs, scale_positional)

SCHEME_KINDS = ("absolute-sinusoidal", "absolute-learned", "relative", "rotary", "none")
REINDEX_MARGIN = 4
LN_EPS = 1e-6


# --- interventions -------------------------------------------------------

@dataclass(frozen=True)
class Vanilla:
    kind: str = field(default="vanilla", init=False)


@dataclass(frozen=True)
class Zeroed:
    kind: str = field(default="zeroed", init=False)


@dataclass(frozen=True)
class Scaled:
    weight: float
    mode: str = "interpolated"
    kind: str = field(default="scaled", init=False)

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise InvalidArgument(f"positional weight must lie in [0, 1], got {self.weight}")


@dataclass(frozen=True)
class Shuffled:
    """Seeded permutation of position indices; each view draws its own permutation."""
    seed: int = 0
    permutation: tuple[int, ...] | None = None
    kind: str = field(default="shuffled", init=False)


@dataclass(frozen=True)
class PairwiseShuffled:
    """One permutation shared by every view of a pair."""
    seed: int = 0
    kind: str = field(default="pairwise-shuffled", init=False)


@dataclass(frozen=True)
class Reindexed:
    drow: int = 0
    dcol: int = 0
    kind: str = field(default="reindexed", init=False)


Intervention = Vanilla | Zeroed | Scaled | Shuffled | PairwiseShuffled | Reindexed


def intervention_to_dict(iv) -> dict:
    d = {"kind": iv.kind}
    if isinstance(iv, Scaled):
        d.update(weight=iv.weight, mode=iv.mode)
    elif isinstance(iv, Shuffled):
        d["seed"] = iv.seed
        if iv.permutation is not None:
            d["permutation"] = list(iv.permutation)
    elif isinstance(iv, PairwiseShuffled):
        d["seed"] = iv.seed
    elif isinstance(iv, Reindexed):
        d.update(drow=iv.drow, dcol=iv.dcol)
    return d


def intervention_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "vanilla":
        return Vanilla()
    if kind == "zeroed":
        return Zeroed()
    if kind == "scaled":
        return Scaled(float(d["weight"]), d.get("mode", "interpolated"))
    if kind == "shuffled":
        perm = d.get("permutation")
        return Shuffled(int(d.get("seed", 0)), tuple(perm) if perm is not None else None)
    if kind == "pairwise-shuffled":
        return PairwiseShuffled(int(d.get("seed", 0)))
    if kind == "reindexed":
        return Reindexed(int(d.get("drow", 0)), int(d.get("dcol", 0)))
    raise InvalidArgument(f"unknown intervention {kind!r}")


def reindex_for_overlap(origin_a, origin_b) -> tuple[Reindexed, Reindexed]:
    """Offsets so that tokens over the same scene patch share position indices.

    Origins are (row, col) in patch units in a shared scene frame; each view is
    shifted by its origin relative to the per-axis minimum.
    """
    lo = (min(origin_a[0], origin_b[0]), min(origin_a[1], origin_b[1]))
    return (Reindexed(origin_a[0] - lo[0], origin_a[1] - lo[1]),
            Reindexed(origin_b[0] - lo[0], origin_b[1] - lo[1]))


# --- model ---------------------------------------------------------------

@dataclass(frozen=True)
class ToyViTConfig:
    image_size: int = 64
    patch_size: int = 8
    dim: int = 64
    heads: int = 4
    layers: int = 4
    scheme: str = "absolute-sinusoidal"
    seed: int = 0
    channels: int = 3
    rotary_mode: str = "interpolated"
    pe_std: float = 0.02

    def __post_init__(self):
        if self.patch_size < 1 or self.image_size % self.patch_size:
            raise InvalidArgument("image size must be divisible by patch size")
        if self.heads < 1 or self.dim % (2 * self.heads):
            raise InvalidArgument("dim must be divisible by 2 * heads")
        if self.layers < 1:
            raise InvalidArgument("layers must be >= 1")
        if self.scheme not in SCHEME_KINDS:
            raise InvalidArgument(f"unknown scheme {self.scheme!r}")
        if self.scheme == "absolute-sinusoidal" and self.dim % 4:
            raise InvalidArgument("sinusoidal scheme needs dim divisible by 4")

    @property
    def grid(self) -> GridShape:
        g = self.image_size // self.patch_size
        return GridShape(g, g)

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


@dataclass(frozen=True, eq=False)
class Model:
    config: ToyViTConfig
    params: dict
    pe: PositionalScheme


def _uniform(rng, fan_in, shape, gain=1.0):
    # the usual linear-layer default: U(-1/sqrt(fan_in), 1/sqrt(fan_in))
    bound = gain / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def build_model(config: ToyViTConfig) -> Model:
    rng = np.random.default_rng(config.seed)
    c, d = config, config.dim
    pin = c.patch_size * c.patch_size * c.channels
    params = {"embed_w": _uniform(rng, pin, (pin, d)), "embed_b": np.zeros(d), "blocks": []}
    # residual branches are damped so tokens keep their identity through depth
    branch_gain = 1.0 / math.sqrt(2 * c.layers)
    for _ in range(c.layers):
        params["blocks"].append({
            "ln1_g": np.ones(d), "ln1_b": np.zeros(d),
            "wq": _uniform(rng, d, (d, d)), "wk": _uniform(rng, d, (d, d)),
            "wv": _uniform(rng, d, (d, d)), "wo": _uniform(rng, d, (d, d), branch_gain),
            "ln2_g": np.ones(d), "ln2_b": np.zeros(d),
            "w1": _uniform(rng, d, (d, 2 * d)), "b1": np.zeros(2 * d),
            "w2": _uniform(rng, 2 * d, (2 * d, d), branch_gain), "b2": np.zeros(d),
        })
    params["lnf_g"], params["lnf_b"] = np.ones(d), np.zeros(d)
    ext = GridShape(c.grid.rows + REINDEX_MARGIN, c.grid.cols + REINDEX_MARGIN)
    pe_seed = int(rng.integers(2 ** 31))
    if c.scheme == "absolute-sinusoidal":
        pe = build_sinusoidal_2d(ext, d)
    elif c.scheme == "absolute-learned":
        pe = build_learned_random(ext, d, pe_seed, c.pe_std)
    elif c.scheme == "relative":
        pe = build_relative_bias(ext, c.heads, pe_seed, c.pe_std)
    elif c.scheme == "rotary":
        pe = build_rotary(c.head_dim, mode=c.rotary_mode)
    else:
        pe = NoPositional()
    return Model(config, params, pe)


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * g + b


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)))


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def token_positions(config: ToyViTConfig, intervention, view: int = 0) -> np.ndarray:
    """Position index (row, col) assigned to each token in row-major order."""
    base = config.grid.positions()
    n = base.shape[0]
    if isinstance(intervention, Reindexed):
        return base + np.array([intervention.drow, intervention.dcol])
    if isinstance(intervention, Shuffled):
        if intervention.permutation is not None:
            perm = np.asarray(intervention.permutation)
            if sorted(perm.tolist()) != list(range(n)):
                raise InvalidArgument("permutation must reorder all token indices")
        else:
            perm = np.random.default_rng([intervention.seed, view]).permutation(n)
        return base[perm]
    if isinstance(intervention, PairwiseShuffled):
        return base[np.random.default_rng([intervention.seed]).permutation(n)]
    return base


def patchify(image: np.ndarray, patch: int) -> np.ndarray:
    h, w, ch = image.shape
    g_r, g_c = h // patch, w // patch
    p = image.reshape(g_r, patch, g_c, patch, ch).transpose(0, 2, 1, 3, 4)
    return p.reshape(g_r * g_c, patch * patch * ch)


def forward(model: Model, image: np.ndarray, intervention=None, view: int = 0,
            final_norm: bool = True) -> list[TokenGrid]:
    """Token grids for layers 0..L; the last one is post final LayerNorm by default.

    ``view`` only matters for :class:`Shuffled`, where each view of a pair gets
    its own permutation.
    """
    c = model.config
    iv = Vanilla() if intervention is None else intervention
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (c.image_size, c.image_size, c.channels):
        raise InvalidArgument(f"image shape {image.shape} does not match config")
    pos = token_positions(c, iv, view)
    use_pe = not isinstance(iv, Zeroed) and not isinstance(model.pe, NoPositional)
    pe = model.pe
    if use_pe and isinstance(iv, Scaled):
        pe = scale_positional(pe, iv.weight)
    rot_mode = iv.mode if isinstance(iv, Scaled) else getattr(pe, "mode", None)

    p = model.params
    x = (2.0 * patchify(image, c.patch_size) - 1.0) @ p["embed_w"] + p["embed_b"]
    if use_pe and isinstance(pe, AbsoluteTable):
        x = x + pe.lookup(pos)
    rows, cols = c.grid.rows, c.grid.cols
    grids = [TokenGrid(x.reshape(rows, cols, c.dim), 0)]

    n, hd = x.shape[0], c.head_dim
    bias = pe.pairwise(pos) if use_pe and isinstance(pe, RelativeBiasTable) else None
    phases = pe.phases(pos) if use_pe and isinstance(pe, RotaryAngles) else None
    for li, blk in enumerate(p["blocks"], start=1):
        h = _layer_norm(x, blk["ln1_g"], blk["ln1_b"])
        q = (h @ blk["wq"]).reshape(n, c.heads, hd).transpose(1, 0, 2)
        k = (h @ blk["wk"]).reshape(n, c.heads, hd).transpose(1, 0, 2)
        v = (h @ blk["wv"]).reshape(n, c.heads, hd).transpose(1, 0, 2)
        if phases is not None:
            q = rotate_pairs(q, phases, pe.weight, rot_mode)
            k = rotate_pairs(k, phases, pe.weight, rot_mode)
        logits = q @ k.transpose(0, 2, 1) / math.sqrt(hd)
        if bias is not None:
            logits = logits + bias
        att = _softmax(logits) @ v
        x = x + att.transpose(1, 0, 2).reshape(n, c.dim) @ blk["wo"]
        h = _layer_norm(x, blk["ln2_g"], blk["ln2_b"])
        x = x + _gelu(h @ blk["w1"] + blk["b1"]) @ blk["w2"] + blk["b2"]
        out = x
        if final_norm and li == c.layers:
            out = _layer_norm(x, p["lnf_g"], p["lnf_b"])
        grids.append(TokenGrid(out.reshape(rows, cols, c.dim), li))
    return grids
