"""Deterministic synthetic scenes, overlapping crop pairs and rectified stereo pairs."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .grid import InvalidArgument

SCENE_KINDS = ("periodic-texture", "random-texture", "gradient", "mixed")
DEFAULT_SCENE_SIZE = 128
DEFAULT_PERIOD = 32
CORPUS_SEEDS = range(32)


@dataclass(frozen=True)
class SceneSpec:
    kind: str
    size: int = DEFAULT_SCENE_SIZE
    period: int | None = None
    seed: int = 0
    channels: int = 3

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise InvalidArgument(f"unknown scene kind {self.kind!r}")
        if self.size < 1:
            raise InvalidArgument("scene size must be positive")
        if self.kind == "periodic-texture":
            if not self.period or self.period < 1 or self.size % self.period:
                raise InvalidArgument(f"period {self.period} must divide size {self.size}")

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(**{k: d[k] for k in ("kind", "size", "period", "seed", "channels") if k in d})


def _gradient(rng, size, channels):
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    coef = rng.uniform(-1.0, 1.0, size=(channels, 2))
    g = coef[:, 0, None, None] * xx + coef[:, 1, None, None] * yy
    lo = g.min(axis=(1, 2), keepdims=True)
    hi = g.max(axis=(1, 2), keepdims=True)
    return np.moveaxis((g - lo) / np.maximum(hi - lo, 1e-12), 0, -1)


def make_scene(spec: SceneSpec) -> np.ndarray:
    """Image of shape (size, size, channels) with values in [0, 1]."""
    rng = np.random.default_rng([SCENE_KINDS.index(spec.kind), spec.seed])
    s, c = spec.size, spec.channels
    if spec.kind == "periodic-texture":
        tile = rng.uniform(0.0, 1.0, size=(spec.period, spec.period, c))
        reps = s // spec.period
        return np.tile(tile, (reps, reps, 1))
    if spec.kind == "random-texture":
        return rng.uniform(0.0, 1.0, size=(s, s, c))
    if spec.kind == "gradient":
        return _gradient(rng, s, c)
    return 0.5 * rng.uniform(0.0, 1.0, size=(s, s, c)) + 0.5 * _gradient(rng, s, c)


@dataclass(frozen=True)
class Rect:
    """Token-unit rectangle: top-left (row, col) and extent."""
    row: int
    col: int
    rows: int
    cols: int

    def slices(self):
        return slice(self.row, self.row + self.rows), slice(self.col, self.col + self.cols)


@dataclass(frozen=True, eq=False)
class OverlapPair:
    crop_a: np.ndarray
    crop_b: np.ndarray
    rect_a: Rect
    rect_b: Rect
    origin_a: tuple[int, int]  # patch units in the scene frame
    origin_b: tuple[int, int]


def make_overlap_pair(image: np.ndarray, dx: int, dy: int = 0, crop_size: int = 64,
                      patch: int = 8) -> OverlapPair:
    """Two crops offset by (dy, dx) whole patches; B sits right/below A for positive offsets."""
    if crop_size % patch:
        raise InvalidArgument("crop size must be a whole number of patches")
    g = crop_size // patch
    if abs(dx) >= g or abs(dy) >= g:
        raise InvalidArgument("offset leaves no overlap")
    oa = (max(0, -dy), max(0, -dx))
    ob = (max(0, dy), max(0, dx))
    h, w = image.shape[:2]
    for o in (oa, ob):
        if o[0] * patch + crop_size > h or o[1] * patch + crop_size > w:
            raise InvalidArgument("crop exceeds image")

    def crop(o):
        return image[o[0] * patch:o[0] * patch + crop_size, o[1] * patch:o[1] * patch + crop_size].copy()

    lo = (max(oa[0], ob[0]), max(oa[1], ob[1]))
    ext = (g - abs(dy), g - abs(dx))
    rect_a = Rect(lo[0] - oa[0], lo[1] - oa[1], *ext)
    rect_b = Rect(lo[0] - ob[0], lo[1] - ob[1], *ext)
    return OverlapPair(crop(oa), crop(ob), rect_a, rect_b, oa, ob)


@dataclass(frozen=True)
class DisparityProfile:
    """Horizontal disparity in pixels.

    ``constant`` uses ``value`` everywhere (integer shift), ``fractional`` the
    same with bilinear resampling, ``per-region`` one value per horizontal band
    of equal height (``values``).
    """
    kind: str = "constant"
    value: float = 8.0
    values: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in ("constant", "fractional", "per-region"):
            raise InvalidArgument(f"unknown disparity profile {self.kind!r}")
        if self.kind == "per-region" and not self.values:
            raise InvalidArgument("per-region profile needs values")
        if self.kind == "constant" and float(self.value) != int(self.value):
            raise InvalidArgument("constant profile needs an integer pixel disparity")

    def field(self, height: int, width: int) -> np.ndarray:
        if self.kind != "per-region":
            return np.full((height, width), float(self.value))
        bands = np.array_split(np.arange(height), len(self.values))
        out = np.empty((height, width))
        for band, v in zip(bands, self.values):
            out[band] = float(v)
        return out

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "per-region":
            d["values"] = list(self.values)
        else:
            d["value"] = self.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DisparityProfile":
        return cls(d.get("kind", "constant"), d.get("value", 8.0), tuple(d.get("values", ())))


@dataclass(frozen=True, eq=False)
class StereoPair:
    left: np.ndarray
    right: np.ndarray
    gt_disparity: np.ndarray  # pixels, indexed by left-view pixel
    token_gt: np.ndarray  # token units, block mean of gt over each patch
    patch: int

    @property
    def pixel_mask(self) -> np.ndarray:
        """Left pixels whose correspondence x - d lies inside the right view."""
        xs = np.arange(self.left.shape[1])[None, :]
        return xs - self.gt_disparity >= 0

    @property
    def token_mask(self) -> np.ndarray:
        cols = np.arange(self.token_gt.shape[1])[None, :]
        return cols - self.token_gt >= 0


def _sample_rows(scene: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Bilinear horizontal sampling of scene rows at real-valued columns xs (H, W)."""
    x0 = np.floor(xs).astype(np.int64)
    f = (xs - x0)[..., None]
    rows = np.arange(xs.shape[0])[:, None]
    a = scene[rows, x0]
    exact = f[..., 0] == 0.0
    x1 = np.where(exact, x0, x0 + 1)
    b = scene[rows, x1]
    return np.where(exact[..., None], a, (1.0 - f) * a + f * b)


def make_stereo_pair(scene: np.ndarray, profile: DisparityProfile, view_size: int = 64,
                     patch: int = 8) -> StereoPair:
    """Left view is the top-left crop; right(x, y) = left(x + d, y) via scene sampling."""
    h, w = scene.shape[:2]
    if view_size > h or view_size > w or view_size % patch:
        raise InvalidArgument("view must fit in the scene and be a whole number of patches")
    d = profile.field(view_size, view_size)
    xs = np.arange(view_size)[None, :] + d
    need = np.ceil(xs).max()
    if xs.min() < 0 or need > w - 1:
        raise InvalidArgument("disparity warp samples outside the scene")
    left = scene[:view_size, :view_size].copy()
    right = _sample_rows(scene[:view_size], xs)
    g = view_size // patch
    token_gt = d.reshape(g, patch, g, patch).mean(axis=(1, 3)) / patch
    return StereoPair(left, right, d, token_gt, patch)


def default_manifest() -> list[dict]:
    """32 scenes per kind, seeds 0..31."""
    out = []
    for kind in SCENE_KINDS:
        for seed in CORPUS_SEEDS:
            spec = SceneSpec(kind, DEFAULT_SCENE_SIZE,
                             DEFAULT_PERIOD if kind == "periodic-texture" else None, seed)
            out.append(spec.to_dict())
    return out


def load_manifest(path) -> list[SceneSpec]:
    entries = json.loads(Path(path).read_text())
    if not isinstance(entries, list):
        raise InvalidArgument("corpus manifest must be a JSON list")
    return [SceneSpec.from_dict(e) for e in entries]


def save_image(path, image: np.ndarray, meta: dict | None = None) -> None:
    """Flat little-endian float32 pixels at ``path`` plus a ``.json`` sidecar."""
    path = Path(path)
    np.ascontiguousarray(image, dtype="<f4").tofile(path)
    side = {"height": image.shape[0], "width": image.shape[1],
            "channels": image.shape[2] if image.ndim == 3 else 1, "dtype": "f32"}
    side.update(meta or {})
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(side, indent=2, sort_keys=True))


def load_image(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    side = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    data = np.fromfile(path, dtype="<f4").astype(np.float64)
    return data.reshape(side["height"], side["width"], side["channels"]), side
