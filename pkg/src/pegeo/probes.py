"""Diagnostic probes: overlap similarity, offset sweeps, stereo correspondence,
linear position decoding, token-offset reconstruction and layer-wise curves.

Disparity convention: a positive disparity d means left pixel x corresponds to
right pixel x - d (so right(x) = left(x + d)). Slices and soft-argmin work with
the signed candidate offset x' - x, which is the negated disparity.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .corrvol import DEFAULT_TAU, DisparityField, epipolar_slice_from_grids, normalize_tokens, soft_argmin_disparity
from .grid import InvalidArgument, TokenGrid
from .reports import ProbeReport
from .synth import Rect, StereoPair, make_overlap_pair
from .toyvit import (Model, Scaled, Vanilla, forward, intervention_to_dict,
                     reindex_for_overlap)

WEIGHT_GRID = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
OFFSETS = (1, 2, 3)
RECALL_N = (1, 2, 5)
D1_ABS, D1_REL = 3.0, 0.05
RIDGE = 1e-3
PROBE_STEPS, PROBE_LR, PROBE_HIDDEN = 500, 0.1, 64
TEST_FRACTION = 0.2


def _workers() -> int:
    n = int(os.environ.get("PEGEO_THREADS", "0") or 0)
    return n if n > 0 else (os.cpu_count() or 1)


def parallel_map(fn, items) -> list:
    """Order-preserving map; each item is computed independently."""
    items = list(items)
    workers = min(_workers(), len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine along the last axis."""
    num = (a * b).sum(axis=-1)
    den = np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1)
    return num / np.maximum(den, 1e-300)


def view_crop(image: np.ndarray, size: int) -> np.ndarray:
    """Top-left size x size crop; scenes larger than the model input are cropped."""
    if image.shape[0] < size or image.shape[1] < size:
        raise InvalidArgument(f"image {image.shape[:2]} is smaller than the {size}px model input")
    return image[:size, :size]


# --- overlap -------------------------------------------------------------

def overlap_similarity(grid_a: TokenGrid, grid_b: TokenGrid, rect_a: Rect, rect_b: Rect):
    """Mean and per-token cosine between corresponding tokens of two overlap rectangles."""
    if (rect_a.rows, rect_a.cols) != (rect_b.rows, rect_b.cols):
        raise InvalidArgument("overlap rectangles are not congruent")
    for g, r in ((grid_a, rect_a), (grid_b, rect_b)):
        if r.row < 0 or r.col < 0 or r.row + r.rows > g.shape.rows or r.col + r.cols > g.shape.cols:
            raise InvalidArgument("overlap rectangle exceeds grid")
    cmap = cosine(grid_a.data[rect_a.slices()], grid_b.data[rect_b.slices()])
    return float(cmap.mean()), cmap


def overlap_probe(model: Model, images, offsets=OFFSETS, layer: int = -1,
                  final_norm: bool = True, config: dict | None = None) -> ProbeReport:
    """Cross-crop overlap cosine per offset, with vanilla and re-indexed (aligned) PEs."""
    c = model.config
    report = ProbeReport("overlap", config or {})

    def run(args):
        img, dx = args
        pair = make_overlap_pair(img, dx, 0, c.image_size, c.patch_size)
        out = {}
        iv_a, iv_b = reindex_for_overlap(pair.origin_a, pair.origin_b)
        for name, (ia, ib) in (("vanilla", (Vanilla(), Vanilla())), ("aligned", (iv_a, iv_b))):
            ga = forward(model, pair.crop_a, ia, 0, final_norm)[layer]
            gb = forward(model, pair.crop_b, ib, 1, final_norm)[layer]
            out[name] = overlap_similarity(ga, gb, pair.rect_a, pair.rect_b)[0]
        return out

    jobs = [(img, dx) for dx in offsets for img in images]
    results = parallel_map(run, jobs)
    n = len(images)
    for i, dx in enumerate(offsets):
        chunk = results[i * n:(i + 1) * n]
        for name in ("vanilla", "aligned"):
            vals = np.array([r[name] for r in chunk])
            report.add(f"{name}/dx={dx}", {"dx": dx, "pe": name, "layer": layer},
                       {"mean_cosine": float(vals.mean()), "stderr": float(_stderr(vals))})
    return report


def _stderr(vals: np.ndarray) -> float:
    return float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0


# --- offset sweep ----------------------------------------------------------

def offset_cosine(grid: TokenGrid, k: int) -> float:
    """Mean cosine between tokens at (i, j) and (i + k, j + k) over valid cells."""
    r, c = grid.shape.rows, grid.shape.cols
    if k >= min(r, c) or k < 0:
        raise InvalidArgument(f"offset {k} does not fit a {r}x{c} grid")
    a = grid.data[:r - k, :c - k]
    b = grid.data[k:, k:]
    return float(cosine(a, b).mean())


def offset_sweep(model: Model, images, offsets=OFFSETS, weights=WEIGHT_GRID, layer: int = -1,
                 mode: str = "interpolated", config: dict | None = None,
                 final_norm: bool = True) -> ProbeReport:
    g = model.config.grid
    if max(offsets) >= min(g.rows, g.cols):
        raise InvalidArgument("offset exceeds grid")
    report = ProbeReport("offset_sweep", config or {})
    size = model.config.image_size
    views = [view_crop(img, size) for img in images]
    for w in weights:
        iv = Scaled(float(w), mode)
        grids = parallel_map(lambda img: forward(model, img, iv, 0, final_norm)[layer], views)
        for k in offsets:
            vals = np.array([offset_cosine(gr, k) for gr in grids])
            report.add(f"k={k}/w={w:g}", {"k": k, "weight": float(w), "mode": mode, "layer": layer},
                       {"mean_cosine": float(vals.mean()), "stderr": _stderr(vals)})
    return report


# --- stereo ----------------------------------------------------------------

@dataclass(frozen=True)
class StereoMetrics:
    epe: float
    d1: float
    recall: dict
    count: int = 0

    def as_dict(self) -> dict:
        out = {"epe": self.epe, "d1": self.d1}
        out.update({f"recall@{n}": v for n, v in sorted(self.recall.items())})
        return out


def _recall_hits(cost_slice, gt, n_set):
    """Per-query top-n membership of the ground-truth candidate column x - round(gt).

    Rank is the number of other candidates responding at least as strongly.
    """
    rows, cols, cr = cost_slice.shape
    cand = np.arange(cols)[None, :] - np.rint(gt).astype(np.int64)
    inside = (cand >= 0) & (cand < cr)
    safe = np.clip(cand, 0, cr - 1)
    v_gt = np.take_along_axis(cost_slice, safe[..., None], axis=-1)
    # ties count against the ground truth: an aliased match is not a hit
    rank = (cost_slice >= v_gt).sum(axis=-1) - 1
    return {n: (rank < n) & inside for n in n_set}


def stereo_metrics(predicted: DisparityField, ground_truth: DisparityField, cost_slice,
                   n_set=RECALL_N, mask=None, unit: float = 1.0) -> StereoMetrics:
    """EPE, D1 and Recall@n over the evaluation mask.

    Recall ranks the slice candidates (right-view columns) of each query and
    checks whether the column x - round(gt) is among the n highest responses.
    The default mask keeps queries whose ground-truth column lies in the right
    view; an explicit ``mask`` replaces it (out-of-view queries then count as
    recall misses). EPE and D1 are reported in ``unit``s of the disparity values (e.g. the
    patch size for per-pixel slices gives token units).
    """
    pred, gt = np.asarray(predicted.values, float), np.asarray(ground_truth.values, float)
    cost_slice = np.asarray(cost_slice, float)
    if pred.shape != gt.shape or cost_slice.shape[:2] != gt.shape:
        raise InvalidArgument("prediction, ground truth and slice shapes must match")
    finite = np.isfinite(gt)
    if mask is None:
        match_x = np.arange(gt.shape[1])[None, :] - np.where(finite, gt, 0.0)
        valid = (match_x >= 0) & (match_x <= cost_slice.shape[-1] - 1) & finite
    else:
        valid = np.asarray(mask, bool) & finite
    if not valid.any():
        raise InvalidArgument("empty evaluation mask")
    err = np.abs(pred - gt)[valid] / unit
    g = np.abs(gt[valid]) / unit
    hits = _recall_hits(cost_slice, np.where(valid, gt, 0.0), n_set)
    recall = {n: float(h[valid].mean()) for n, h in hits.items()}
    d1 = float(((err > D1_ABS) & (err > D1_REL * g)).mean())
    return StereoMetrics(float(err.mean()), d1, recall, int(valid.sum()))


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Bilinear (half-pixel centres, edge clamped) resampling matrix n_out x n_in."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    f = src - i0
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), i0] += 1.0 - f
    m[np.arange(n_out), i1] += f
    return m


def upsample_bilinear(grid: TokenGrid, factor: int) -> TokenGrid:
    r, c = grid.shape.rows, grid.shape.cols
    mr, mc = _interp_matrix(r, r * factor), _interp_matrix(c, c * factor)
    up = np.einsum("ar,rcd->acd", mr, grid.data)
    up = np.einsum("bc,acd->abd", mc, up)
    return TokenGrid(up, grid.layer)


def stereo_correspondence(model: Model, pair: StereoPair, intervention, tau=DEFAULT_TAU,
                          upsample: str = "none", layer: int = -1, final_norm: bool = True):
    """Per-query slice, predicted disparity and ground truth for one rectified pair.

    Disparities are in token units; in bilinear mode the slice is per pixel.
    Returns (slice, predicted, ground truth, unit, degenerate token count).
    """
    gl = forward(model, pair.left, intervention, 0, final_norm)[layer]
    gr = forward(model, pair.right, intervention, 1, final_norm)[layer]
    if upsample == "bilinear":
        gl, gr = upsample_bilinear(gl, pair.patch), upsample_bilinear(gr, pair.patch)
        gt, unit = pair.gt_disparity, float(pair.patch)
    elif upsample == "none":
        gt, unit = pair.token_gt, 1.0
    else:
        raise InvalidArgument(f"unknown upsample mode {upsample!r}")
    (nl, bad_l), (nr, bad_r) = normalize_tokens(gl, True), normalize_tokens(gr, True)
    sl = epipolar_slice_from_grids(nl, nr)
    pred = -soft_argmin_disparity(sl, tau).values
    return sl, pred, gt, unit, int(bad_l.sum() + bad_r.sum())


def stereo_probe(model: Model, pairs, interventions, tau: float = DEFAULT_TAU, upsample: str = "none",
                 n_set=RECALL_N, layer: int = -1, config: dict | None = None,
                 slice_sink=None, final_norm: bool = True) -> ProbeReport:
    """Stereo metrics per intervention, pooled over all queries of all pairs.

    ``slice_sink(intervention_index, slice)`` receives the first pair's slice.
    """
    report = ProbeReport("stereo", config or {})
    report.notes.append("D1 convention: |err| > 3 tokens and > 5% of |gt| (stereo benchmark rule)")
    for idx, iv in enumerate(interventions):
        def one(pair, iv=iv):
            return stereo_correspondence(model, pair, iv, tau, upsample, layer, final_norm)
        results = parallel_map(one, pairs)
        if slice_sink is not None:
            slice_sink(idx, results[0][0])
        per_pair = [stereo_metrics(DisparityField(pred), DisparityField(gt), sl, n_set, unit=unit)
                    for sl, pred, gt, unit, _ in results]
        degenerate = sum(r[4] for r in results)
        if degenerate:
            report.notes.append(f"{iv.kind}: {degenerate} zero-norm tokens replaced by a unit basis vector")
        count = sum(m.count for m in per_pair)
        metrics = {"epe": sum(m.epe * m.count for m in per_pair) / count,
                   "d1": sum(m.d1 * m.count for m in per_pair) / count}
        metrics.update({f"recall@{n}": sum(m.recall[n] * m.count for m in per_pair) / count
                        for n in n_set})
        report.add(iv.kind, {"intervention": intervention_to_dict(iv), "tau": tau, "upsample": upsample,
                             "layer": layer}, metrics)
    return report


# --- linear probes ---------------------------------------------------------

def split_images(n: int, seed: int, test_fraction: float = TEST_FRACTION):
    """Seeded train/test split of image indices."""
    if n < 2:
        raise InvalidArgument("need at least two images to split")
    perm = np.random.default_rng(seed).permutation(n)
    n_test = min(n - 1, max(1, int(round(test_fraction * n))))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def _stack(grids, idx):
    x = np.concatenate([grids[i].flat() for i in idx])
    pos = np.concatenate([grids[i].shape.positions() for i in idx])
    return x, pos[:, 0], pos[:, 1]


def _xent_grad(logits, labels):
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(len(labels)), labels] -= 1.0
    return p / len(labels)


def position_decodability(grids, probe_kind: str = "linear-softmax", seed: int = 0,
                          steps: int = PROBE_STEPS, lr: float = PROBE_LR,
                          hidden: int = PROBE_HIDDEN) -> dict:
    """Train row/col classifiers on tokens of training images; test accuracies per axis and joint.

    ``grids`` holds one token grid per image; labels are each token's grid position.
    Features are standardised with training statistics before full-batch gradient descent.
    """
    if probe_kind not in ("linear-softmax", "one-hidden"):
        raise InvalidArgument(f"unknown probe kind {probe_kind!r}")
    shape = grids[0].shape
    if any(g.shape != shape for g in grids):
        raise InvalidArgument("all grids must share a shape")
    if shape.rows < 2 or shape.cols < 2:
        raise InvalidArgument("need at least two labels per axis")
    tr, te = split_images(len(grids), seed)
    x_tr, r_tr, c_tr = _stack(grids, tr)
    x_te, r_te, c_te = _stack(grids, te)
    mu, sd = x_tr.mean(axis=0), x_tr.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    x_tr, x_te = (x_tr - mu) / sd, (x_te - mu) / sd

    rng = np.random.default_rng([seed, 1])
    d = x_tr.shape[1]
    w1 = b1 = None
    if probe_kind == "one-hidden":
        w1 = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, hidden))
        b1 = np.zeros(hidden)
        d = hidden
    heads = [[rng.normal(0.0, 0.01, size=(d, k)), np.zeros(k)] for k in (shape.rows, shape.cols)]

    def features(x):
        return x if w1 is None else np.maximum(x @ w1 + b1, 0.0)

    for _ in range(steps):
        h = features(x_tr)
        grad_h = np.zeros_like(h)
        for (w, b), y in zip(heads, (r_tr, c_tr)):
            g = _xent_grad(h @ w + b, y)
            grad_h += g @ w.T
            w -= lr * (h.T @ g)
            b -= lr * g.sum(axis=0)
        if w1 is not None:
            gz = grad_h * (h > 0)
            w1 -= lr * (x_tr.T @ gz)
            b1 -= lr * gz.sum(axis=0)

    h = features(x_te)
    pr = (h @ heads[0][0] + heads[0][1]).argmax(axis=1)
    pc = (h @ heads[1][0] + heads[1][1]).argmax(axis=1)
    return {"row": float((pr == r_te).mean()), "col": float((pc == c_te).mean()),
            "both": float(((pr == r_te) & (pc == c_te)).mean()), "test_tokens": int(len(r_te))}


def _offset_pairs(grids, idx, k):
    ref, tgt = [], []
    for i in idx:
        g = grids[i].data
        r, c = g.shape[:2]
        ref.append(g[:r - k, :c - k].reshape(-1, g.shape[2]))
        tgt.append(g[k:, k:].reshape(-1, g.shape[2]))
    return np.concatenate(ref), np.concatenate(tgt)


def offset_reconstruction(grids, k: int, ridge: float = RIDGE, seed: int = 0) -> tuple[float, float]:
    """Held-out cosine of a ridge map from T(i, j) to T(i + k, j + k), and the direct-cosine baseline."""
    if not ridge > 0:
        raise InvalidArgument("ridge strength must be > 0")
    shape = grids[0].shape
    if k < 0 or k >= min(shape.rows, shape.cols):
        raise InvalidArgument(f"offset {k} outside grid")
    tr, te = split_images(len(grids), seed)
    x, y = _offset_pairs(grids, tr, k)
    xa = np.hstack([x, np.ones((len(x), 1))])
    w = np.linalg.solve(xa.T @ xa + ridge * np.eye(xa.shape[1]), xa.T @ y)
    xt, yt = _offset_pairs(grids, te, k)
    pred = np.hstack([xt, np.ones((len(xt), 1))]) @ w
    return float(cosine(pred, yt).mean()), float(cosine(xt, yt).mean())


# --- layer-wise -------------------------------------------------------------

def layerwise_similarity(model: Model, view_a: np.ndarray, view_b: np.ndarray, rect_a: Rect,
                         rect_b: Rect, intervention=None, final_norm: bool = True) -> list[float]:
    """Mean overlap cosine at every layer, patch embedding included.

    ``intervention`` is one intervention used for both views (view index 0 and 1)
    or an explicit (view_a, view_b) pair.
    """
    iv = Vanilla() if intervention is None else intervention
    ia, ib = iv if isinstance(iv, tuple) else (iv, iv)
    ga = forward(model, view_a, ia, 0, final_norm)
    gb = forward(model, view_b, ib, 1, final_norm)
    return [overlap_similarity(a, b, rect_a, rect_b)[0] for a, b in zip(ga, gb)]

