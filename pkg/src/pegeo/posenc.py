"""Positional encoding schemes over a 2D patch grid.

Three families are covered: absolute tables (2D sinusoidal or seeded random),
per-head relative bias tables indexed by displacement, and 2D rotary angles.
Each scheme carries a positional weight in [0, 1]; see :func:`scale_positional`.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from .grid import GridShape, InvalidArgument

ROTARY_MODES = ("interpolated", "phase-scaled")
INIT_STD = 0.02


@dataclass(frozen=True, eq=False)
class AbsoluteTable:
    shape: GridShape
    dim: int
    table: np.ndarray
    kind: str  # "learned-random" | "sinusoidal-2d"
    seed: int | None = None
    std: float = INIT_STD
    weight: float = 1.0

    def lookup(self, positions) -> np.ndarray:
        """Vectors for an (n, 2) array of (row, col) positions.

        Sinusoidal tables are evaluated analytically, so any position is valid.
        Learned tables raise for positions outside the stored grid.
        """
        pos = np.asarray(positions)
        if self.kind == "sinusoidal-2d":
            enc = sinusoid_2d(pos, self.dim)
            return enc if self.weight == 1.0 else self.weight * enc
        pos = pos.astype(np.int64)
        r, c = pos[:, 0], pos[:, 1]
        if r.min(initial=0) < 0 or c.min(initial=0) < 0 or r.max(initial=0) >= self.shape.rows \
                or c.max(initial=0) >= self.shape.cols:
            raise InvalidArgument(f"position outside {self.shape.rows}x{self.shape.cols} table")
        return self.table[r * self.shape.cols + c]


@dataclass(frozen=True, eq=False)
class RelativeBiasTable:
    shape: GridShape
    heads: int
    table: np.ndarray  # heads x (2R-1) x (2C-1)
    seed: int | None = None
    std: float = INIT_STD
    weight: float = 1.0

    def lookup(self, drow, dcol, head: int | None = None) -> np.ndarray:
        """Bias b(drow, dcol); shape (heads, *drow.shape) unless a head is given."""
        dr = np.asarray(drow, dtype=np.int64) + self.shape.rows - 1
        dc = np.asarray(dcol, dtype=np.int64) + self.shape.cols - 1
        if dr.min(initial=0) < 0 or dc.min(initial=0) < 0 \
                or dr.max(initial=0) > 2 * self.shape.rows - 2 \
                or dc.max(initial=0) > 2 * self.shape.cols - 2:
            raise InvalidArgument("displacement outside relative bias table")
        if head is None:
            return self.table[:, dr, dc]
        return self.table[head, dr, dc]

    def pairwise(self, positions, head: int | None = None) -> np.ndarray:
        """Bias matrix for all token pairs; entry (i, j) uses displacement j - i."""
        pos = np.asarray(positions, dtype=np.int64)
        disp = pos[None, :, :] - pos[:, None, :]
        return self.lookup(disp[..., 0], disp[..., 1], head)


@dataclass(frozen=True, eq=False)
class RotaryAngles:
    dim: int
    frequencies: np.ndarray  # length dim/2, strictly decreasing
    axes: np.ndarray  # 0 = row axis, 1 = col axis, one entry per pair
    base: float = 10000.0
    weight: float = 1.0
    mode: str = "interpolated"

    def phases(self, positions) -> np.ndarray:
        """Per-pair phase p_axis * freq for an (n, 2) array of positions -> (n, dim/2)."""
        pos = np.asarray(positions, dtype=np.float64)
        return pos[:, self.axes] * self.frequencies


@dataclass(frozen=True)
class NoPositional:
    kind: str = field(default="none", init=False)


PositionalScheme = Union[AbsoluteTable, RelativeBiasTable, RotaryAngles, NoPositional]


def _check_weight(w: float) -> float:
    w = float(w)
    if not 0.0 <= w <= 1.0:
        raise InvalidArgument(f"positional weight must lie in [0, 1], got {w}")
    return w


def sinusoid_2d(positions, dim: int) -> np.ndarray:
    """Row encoding in the first dim/2 channels, column encoding in the rest.

    Within each half, channel 2m holds sin(p * f_m) and 2m+1 holds cos(p * f_m)
    with f_m = 10000 ** (-2m / (dim/2)).
    """
    if dim % 4:
        raise InvalidArgument(f"sinusoidal 2D encoding needs dim divisible by 4, got {dim}")
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    half = dim // 2
    freqs = 10000.0 ** (-np.arange(0, half, 2) / half)
    out = np.empty((pos.shape[0], dim))
    for axis in range(2):
        ang = pos[:, axis:axis + 1] * freqs
        out[:, axis * half:(axis + 1) * half:2] = np.sin(ang)
        out[:, axis * half + 1:(axis + 1) * half:2] = np.cos(ang)
    return out


def build_sinusoidal_2d(shape: GridShape, dim: int) -> AbsoluteTable:
    if dim % 4:
        raise InvalidArgument(f"dim must be divisible by 4, got {dim}")
    return AbsoluteTable(shape, dim, sinusoid_2d(shape.positions(), dim), "sinusoidal-2d")


def build_learned_random(shape: GridShape, dim: int, seed: int, std: float = INIT_STD) -> AbsoluteTable:
    """Seeded stand-in for a learned table: i.i.d. N(0, std^2) entries."""
    if dim < 1:
        raise InvalidArgument("dim must be >= 1")
    rng = np.random.default_rng(seed)
    table = rng.normal(0.0, std, size=(shape.size, dim))
    return AbsoluteTable(shape, dim, table, "learned-random", seed=seed, std=std)


def build_relative_bias(shape: GridShape, heads: int, seed: int, std: float = INIT_STD) -> RelativeBiasTable:
    if heads < 1:
        raise InvalidArgument("heads must be >= 1")
    rng = np.random.default_rng(seed)
    table = rng.normal(0.0, std, size=(heads, 2 * shape.rows - 1, 2 * shape.cols - 1))
    return RelativeBiasTable(shape, heads, table, seed=seed, std=std)


def build_rotary(dim: int, base: float = 10000.0, mode: str = "interpolated") -> RotaryAngles:
    """Rotary angles with pairs alternating between the row and column axes."""
    if dim < 2 or dim % 2:
        raise InvalidArgument(f"rotary dim must be a positive even integer, got {dim}")
    if mode not in ROTARY_MODES:
        raise InvalidArgument(f"unknown rotary mode {mode!r}")
    b = np.arange(dim // 2)
    freqs = base ** (-2.0 * b / dim)
    return RotaryAngles(dim, freqs, b % 2, base=base, mode=mode)


def rotate_pairs(x: np.ndarray, phases: np.ndarray, weight: float = 1.0,
                 mode: str = "phase-scaled") -> np.ndarray:
    """Rotate adjacent channel pairs of ``x`` (..., dim) by ``phases`` (..., dim/2).

    ``phase-scaled`` applies R(w * theta); ``interpolated`` applies the blend
    (1 - w) I + w R(theta). Both reduce to R(theta) exactly at w = 1.
    """
    if mode not in ROTARY_MODES:
        raise InvalidArgument(f"unknown rotary mode {mode!r}")
    if mode == "phase-scaled":
        ang = phases if weight == 1.0 else weight * phases
        c, s = np.cos(ang), np.sin(ang)
    else:
        c = (1.0 - weight) + weight * np.cos(phases)
        s = weight * np.sin(phases)
    x0, x1 = x[..., 0::2], x[..., 1::2]
    a = c * x0 - s * x1
    b = s * x0 + c * x1
    out = np.empty(a.shape[:-1] + (2 * a.shape[-1],))
    out[..., 0::2] = a
    out[..., 1::2] = b
    return out


def _rope_inputs(vector, position, angles: RotaryAngles):
    v = np.asarray(vector, dtype=np.float64)
    if v.shape != (angles.dim,):
        raise InvalidArgument(f"vector length {v.shape} does not match rotary dim {angles.dim}")
    return v, angles.phases(np.asarray(position, dtype=np.float64).reshape(1, 2))[0]


def rope_rotate(vector, position, angles: RotaryAngles) -> np.ndarray:
    v, ph = _rope_inputs(vector, position, angles)
    return rotate_pairs(v, ph)


def rope_rotate_weighted(vector, position, angles: RotaryAngles, weight: float,
                         mode: str = "interpolated") -> np.ndarray:
    w = _check_weight(weight)
    v, ph = _rope_inputs(vector, position, angles)
    return rotate_pairs(v, ph, w, mode)


def scale_positional(scheme: PositionalScheme, weight: float) -> PositionalScheme:
    """Apply a positional weight: P' = w P and B' = w B; rotary keeps w for rotation time."""
    w = _check_weight(weight)
    if isinstance(scheme, AbsoluteTable):
        return replace(scheme, table=w * scheme.table, weight=w * scheme.weight)
    if isinstance(scheme, RelativeBiasTable):
        return replace(scheme, table=w * scheme.table, weight=w * scheme.weight)
    if isinstance(scheme, RotaryAngles):
        return replace(scheme, weight=w * scheme.weight)
    return scheme


def scheme_to_descriptor(scheme: PositionalScheme) -> dict:
    if isinstance(scheme, AbsoluteTable):
        d = {"kind": "absolute-sinusoidal" if scheme.kind == "sinusoidal-2d" else "absolute-learned",
             "shape": [scheme.shape.rows, scheme.shape.cols], "dim": scheme.dim}
        if scheme.kind == "learned-random":
            d.update(seed=scheme.seed, std=scheme.std)
    elif isinstance(scheme, RelativeBiasTable):
        d = {"kind": "relative", "shape": [scheme.shape.rows, scheme.shape.cols],
             "heads": scheme.heads, "seed": scheme.seed, "std": scheme.std}
    elif isinstance(scheme, RotaryAngles):
        d = {"kind": "rotary", "dim": scheme.dim, "base": scheme.base, "mode": scheme.mode}
    else:
        return {"kind": "none"}
    d["weight"] = scheme.weight
    return d


def scheme_from_descriptor(desc: dict) -> PositionalScheme:
    kind = desc.get("kind")
    if kind == "none":
        return NoPositional()
    weight = desc.get("weight", 1.0)
    if kind == "rotary":
        scheme = build_rotary(int(desc["dim"]), float(desc.get("base", 10000.0)),
                              desc.get("mode", "interpolated"))
    else:
        shape = GridShape(*desc["shape"])
        if kind == "absolute-sinusoidal":
            scheme = build_sinusoidal_2d(shape, int(desc["dim"]))
        elif kind == "absolute-learned":
            scheme = build_learned_random(shape, int(desc["dim"]), int(desc["seed"]),
                                          float(desc.get("std", INIT_STD)))
        elif kind == "relative":
            scheme = build_relative_bias(shape, int(desc["heads"]), int(desc["seed"]),
                                         float(desc.get("std", INIT_STD)))
        else:
            raise InvalidArgument(f"unknown scheme kind {kind!r}")
    return scheme if weight == 1.0 else scale_positional(scheme, weight)
