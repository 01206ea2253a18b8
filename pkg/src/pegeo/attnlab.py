"""Pre-softmax attention logits under each positional scheme.

Covers the four-term content/position split for additive encodings, the
closed-form rotary pair term, and the PE-induced expected kernel estimated
either by Monte Carlo or in closed form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import GridShape, InvalidArgument, TokenGrid
from .posenc import (AbsoluteTable, PositionalScheme, RelativeBiasTable,
                     RotaryAngles, rotate_pairs)

MC_CHUNK = 1000


@dataclass(frozen=True, eq=False)
class ProjectionPair:
    w_q: np.ndarray
    w_k: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        if self.w_q.ndim != 2 or self.w_q.shape[0] != self.w_q.shape[1] or self.w_q.shape != self.w_k.shape:
            raise InvalidArgument("projections must be square with equal dims")

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]

    @property
    def bilinear(self) -> np.ndarray:
        """M = W_Q^T W_K."""
        return self.w_q.T @ self.w_k


def build_projection_pair(dim: int, seed: int, tied: bool = False) -> ProjectionPair:
    """Gaussian projections with std 1/sqrt(dim); ``tied`` sets W_K = W_Q."""
    rng = np.random.default_rng(seed)
    w_q = rng.normal(0.0, 1.0 / math.sqrt(dim), size=(dim, dim))
    w_k = w_q.copy() if tied else rng.normal(0.0, 1.0 / math.sqrt(dim), size=(dim, dim))
    return ProjectionPair(w_q, w_k, seed)


@dataclass(frozen=True, eq=False)
class LogitDecomposition:
    cc: np.ndarray
    cp: np.ndarray
    pc: np.ndarray
    pp: np.ndarray
    scale: float

    def total(self) -> np.ndarray:
        return self.cc + self.cp + self.pc + self.pp


@dataclass(frozen=True, eq=False)
class ExpectedKernel:
    kernel: np.ndarray
    method: str
    samples: int
    seed: int
    stderr: np.ndarray | None = None
    lambdas: np.ndarray | None = None
    content: str = "shared"


def _batch_logits(x: np.ndarray, scheme: PositionalScheme, proj: ProjectionPair,
                  positions: np.ndarray, head: int = 0) -> np.ndarray:
    """Logits for a batch of token sets x (S, N, d) -> (S, N, N)."""
    d = proj.dim
    if x.shape[-1] != d:
        raise InvalidArgument(f"token dim {x.shape[-1]} does not match projection dim {d}")
    if isinstance(scheme, AbsoluteTable):
        x = x + scheme.lookup(positions)
    q = x @ proj.w_q.T
    k = x @ proj.w_k.T
    if isinstance(scheme, RotaryAngles):
        if scheme.dim != d:
            raise InvalidArgument("rotary dim does not match projection dim")
        ph = scheme.phases(positions)
        q = rotate_pairs(q, ph, scheme.weight, scheme.mode)
        k = rotate_pairs(k, ph, scheme.weight, scheme.mode)
    logits = np.matmul(q, np.swapaxes(k, -1, -2)) / math.sqrt(d)
    if isinstance(scheme, RelativeBiasTable):
        logits = logits + scheme.pairwise(positions, head)
    return logits


def attention_logits(tokens: TokenGrid, scheme: PositionalScheme, proj: ProjectionPair,
                     positions=None, head: int = 0) -> np.ndarray:
    """alpha_ij = q_i . k_j / sqrt(d) with the scheme's positional injection.

    ``positions`` overrides the grid positions used for lookup (row-major order).
    """
    pos = tokens.shape.positions() if positions is None else np.asarray(positions)
    return _batch_logits(tokens.flat()[None], scheme, proj, pos, head)[0]


def decompose_absolute(tokens: TokenGrid, table: AbsoluteTable, proj: ProjectionPair,
                       positions=None) -> LogitDecomposition:
    if not isinstance(table, AbsoluteTable):
        raise InvalidArgument("decomposition needs an absolute positional table")
    if tokens.dim != proj.dim or table.dim != proj.dim:
        raise InvalidArgument("token, table and projection dims must agree")
    pos = tokens.shape.positions() if positions is None else np.asarray(positions)
    x = tokens.flat()
    p = table.lookup(pos)
    m = proj.bilinear
    s = 1.0 / math.sqrt(proj.dim)
    xm, pm = x @ m, p @ m
    return LogitDecomposition(cc=s * xm @ x.T, cp=s * xm @ p.T, pc=s * pm @ x.T, pp=s * pm @ p.T, scale=s)


def rope_logit_pairterm(q_pair, k_pair, dphi: float) -> float:
    (q1, q2), (k1, k2) = q_pair, k_pair
    return (q1 * k1 + q2 * k2) * math.cos(dphi) + (q2 * k1 - q1 * k2) * math.sin(dphi)


def _draw_content(rng, n: int, tokens: int, dim: int, content: str) -> np.ndarray:
    if content == "shared":
        return np.broadcast_to(rng.standard_normal((n, 1, dim)), (n, tokens, dim))
    return rng.standard_normal((n, tokens, dim))


def _chunks(samples: int):
    for k, start in enumerate(range(0, samples, MC_CHUNK)):
        yield k, min(MC_CHUNK, samples - start)


def _monte_carlo(scheme, proj, positions, samples, seed, content):
    n_tok = positions.shape[0]
    count, mean, m2 = 0, np.zeros((n_tok, n_tok)), np.zeros((n_tok, n_tok))
    for k, n in _chunks(samples):
        rng = np.random.default_rng([seed, k])
        batch = _batch_logits(_draw_content(rng, n, n_tok, proj.dim, content), scheme, proj, positions)
        b_mean = batch.mean(axis=0)
        b_m2 = ((batch - b_mean) ** 2).sum(axis=0)
        # pairwise combination of running moments, fixed chunk order
        delta = b_mean - mean
        total = count + n
        mean = mean + delta * (n / total)
        m2 = m2 + b_m2 + delta ** 2 * (count * n / total)
        count = total
    if samples > 1:
        stderr = np.sqrt(m2 / (samples - 1) / samples)
    else:
        stderr = np.full_like(mean, np.inf)
    return mean, stderr


def estimate_pair_correlation(proj: ProjectionPair, samples: int, seed: int) -> np.ndarray:
    """lambda_b: mean of q_{2b} k_{2b} and q_{2b+1} k_{2b+1} over content draws.

    Uses the same chunked draws as the shared-content Monte Carlo sampler.
    """
    acc = np.zeros(proj.dim // 2)
    for k, n in _chunks(samples):
        rng = np.random.default_rng([seed, k])
        x = rng.standard_normal((n, 1, proj.dim))[:, 0]
        prod = (x @ proj.w_q.T) * (x @ proj.w_k.T)
        acc += (prod[:, 0::2] + prod[:, 1::2]).sum(axis=0) / 2.0
    return acc / samples


def rotary_kernel(angles: RotaryAngles, lambdas: np.ndarray, positions) -> np.ndarray:
    """Closed-form expected rotary logits for pairwise-isotropic q/k correlation.

    Each pair contributes lambda_b * tr(A_i^T A_j) / sqrt(d) where A is the
    (possibly weighted) 2x2 rotation. At full weight this is
    2 lambda_b cos(dphi_b) / sqrt(d).
    """
    ph = angles.phases(positions)
    w = angles.weight
    if angles.mode == "phase-scaled" or w == 1.0:
        ang = ph if w == 1.0 else w * ph
        dphi = ang[None, :, :] - ang[:, None, :]
        pair = 2.0 * np.cos(dphi)
    else:
        c = (1.0 - w) + w * np.cos(ph)
        s = w * np.sin(ph)
        # tr(A_i^T A_j) for A = [[c, -s], [s, c]]
        pair = 2.0 * (c[:, None, :] * c[None, :, :] + s[:, None, :] * s[None, :, :])
    return (pair * lambdas).sum(axis=-1) / math.sqrt(angles.dim)


def expected_kernel(scheme: PositionalScheme, proj: ProjectionPair, method: str = "monte-carlo",
                    samples: int = 10000, seed: int = 0, shape: GridShape | None = None,
                    content: str = "shared", lambdas=None) -> ExpectedKernel:
    """PE-induced expected kernel E[alpha_ij] over zero-mean Gaussian content.

    ``content="shared"`` draws one content vector per sample and gives it to
    every token (a constant-content image); ``"independent"`` draws each
    token separately. The analytic rotary kernel uses ``lambdas`` if given,
    else estimates them from the same draws.
    """
    if shape is None:
        shape = getattr(scheme, "shape", None)
        if shape is None:
            raise InvalidArgument("a grid shape is required for this scheme")
    if content not in ("shared", "independent"):
        raise InvalidArgument(f"unknown content sampler {content!r}")
    positions = shape.positions()
    if method == "monte-carlo":
        if samples < 1:
            raise InvalidArgument("monte-carlo needs samples >= 1")
        k, se = _monte_carlo(scheme, proj, positions, samples, seed, content)
        return ExpectedKernel(k, method, samples, seed, stderr=se, content=content)
    if method != "analytic":
        raise InvalidArgument(f"unknown method {method!r}")
    if isinstance(scheme, AbsoluteTable):
        p = scheme.lookup(positions)
        k = p @ proj.bilinear @ p.T / math.sqrt(proj.dim)
        return ExpectedKernel(k, method, 0, seed, content=content)
    if isinstance(scheme, RelativeBiasTable):
        return ExpectedKernel(scheme.pairwise(positions, 0), method, 0, seed, content=content)
    if isinstance(scheme, RotaryAngles):
        if lambdas is None:
            if samples < 1:
                raise InvalidArgument("estimating lambdas needs samples >= 1")
            lambdas = estimate_pair_correlation(proj, samples, seed)
        lambdas = np.asarray(lambdas, dtype=np.float64)
        return ExpectedKernel(rotary_kernel(scheme, lambdas, positions), method, samples, seed,
                              lambdas=lambdas, content=content)
    raise InvalidArgument(f"no analytic kernel for {type(scheme).__name__}")
