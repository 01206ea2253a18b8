"""Dense 4D correlation volumes, matching distributions and the rectified slice.

Layout is (y, x, y', x'): query cell first, candidate plane innermost. Axis
names follow image convention: ``y`` is the row and ``x`` the column.

Note on naming: the disparity estimator below is traditionally called
soft-argmin, but it takes a softmax over *similarities*, so it is a
soft-argmax on affinity.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridShape, InvalidArgument, TokenGrid

DEFAULT_TAU = 50.0
ZERO_NORM = 1e-12
UNIT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class CorrelationVolume:
    data: np.ndarray  # rows_L x cols_L x rows_R x cols_R
    normalized: bool

    @property
    def left_shape(self) -> GridShape:
        return GridShape(*self.data.shape[:2])

    @property
    def right_shape(self) -> GridShape:
        return GridShape(*self.data.shape[2:])


@dataclass(frozen=True, eq=False)
class MatchDistribution:
    data: np.ndarray
    temperature: float


@dataclass(frozen=True, eq=False)
class DisparityField:
    values: np.ndarray  # rows x cols, token (or pixel) units

    @property
    def shape(self) -> GridShape:
        return GridShape(*self.values.shape)


def normalize_tokens(grid: TokenGrid, return_mask: bool = False):
    """L2-normalise each token.

    Zero-norm tokens are replaced by the first unit basis vector; pass
    ``return_mask=True`` to also get the boolean mask of replaced tokens.
    """
    x = grid.data
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    degenerate = norm[..., 0] < ZERO_NORM
    out = x / np.where(degenerate[..., None], 1.0, norm)
    if degenerate.any():
        out[degenerate] = 0.0
        out[degenerate, 0] = 1.0
    res = TokenGrid(out, grid.layer)
    return (res, degenerate) if return_mask else res


def _is_unit(grid: TokenGrid) -> bool:
    return bool(np.all(np.abs(np.linalg.norm(grid.data, axis=-1) - 1.0) <= UNIT_TOL))


def build_volume(left: TokenGrid, right: TokenGrid) -> CorrelationVolume:
    """C(y, x, y', x') = F_L(y, x) . F_R(y', x')."""
    if left.dim != right.dim:
        raise InvalidArgument(f"token dims differ: {left.dim} vs {right.dim}")
    data = (left.flat() @ right.flat().T).reshape(left.data.shape[:2] + right.data.shape[:2])
    return CorrelationVolume(data, _is_unit(left) and _is_unit(right))


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not tau > 0:
        raise InvalidArgument(f"temperature must be positive, got {tau}")
    return tau


def _softmax_last(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def match_distribution(volume: CorrelationVolume, tau: float = DEFAULT_TAU) -> MatchDistribution:
    """Spatial softmax of tau * C over the candidate plane of each query."""
    tau = _check_tau(tau)
    rl, cl, rr, cr = volume.data.shape
    p = _softmax_last(tau * volume.data.reshape(rl, cl, rr * cr))
    return MatchDistribution(p.reshape(rl, cl, rr, cr), tau)


def soft_argmax_displacement(dist: MatchDistribution) -> np.ndarray:
    """Expected (dx, dy) = E[(x' - x, y' - y)] per query, shape rows x cols x 2."""
    rl, cl, rr, cr = dist.data.shape
    p = dist.data
    ex = np.einsum("abcd,d->ab", p, np.arange(cr, dtype=np.float64))
    ey = np.einsum("abcd,c->ab", p, np.arange(rr, dtype=np.float64))
    xs = np.arange(cl, dtype=np.float64)[None, :]
    ys = np.arange(rl, dtype=np.float64)[:, None]
    return np.stack([ex - xs, ey - ys], axis=-1)


def hard_argmax_displacement(volume: CorrelationVolume) -> np.ndarray:
    rl, cl, rr, cr = volume.data.shape
    idx = volume.data.reshape(rl, cl, -1).argmax(axis=-1)
    yy, xx = np.divmod(idx, cr)
    return np.stack([xx - np.arange(cl)[None, :], yy - np.arange(rl)[:, None]], axis=-1).astype(np.float64)


def epipolar_slice(volume: CorrelationVolume) -> np.ndarray:
    """Same-row cost: out[y, x, x'] = C(y, x, y, x'); the signed offset is d = x' - x."""
    rl, cl, rr, cr = volume.data.shape
    if rl != rr:
        raise InvalidArgument(f"row counts differ: {rl} vs {rr}")
    y = np.arange(rl)
    return volume.data[y, :, y, :]


def epipolar_slice_from_grids(left: TokenGrid, right: TokenGrid) -> np.ndarray:
    """The same slice without materialising the 4D volume."""
    if left.dim != right.dim:
        raise InvalidArgument(f"token dims differ: {left.dim} vs {right.dim}")
    if left.data.shape[0] != right.data.shape[0]:
        raise InvalidArgument("row counts differ")
    return np.matmul(left.data, right.data.transpose(0, 2, 1))


def soft_argmin_disparity(cost_slice: np.ndarray, tau: float = DEFAULT_TAU) -> DisparityField:
    """d_hat(y, x) = sum_d d * softmax(tau * C(y, x, d)), with d = x' - x."""
    tau = _check_tau(tau)
    p = _softmax_last(tau * np.asarray(cost_slice, dtype=np.float64))
    cr = p.shape[-1]
    ex = p @ np.arange(cr, dtype=np.float64)
    return DisparityField(ex - np.arange(p.shape[1], dtype=np.float64)[None, :])
