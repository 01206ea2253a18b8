"""Run configuration: JSON file -> validated, defaults-filled RunConfig."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

from .grid import InvalidArgument
from .probes import OFFSETS, RECALL_N, WEIGHT_GRID
from .synth import SCENE_KINDS, DisparityProfile
from .toyvit import ToyViTConfig, intervention_from_dict
from .corrvol import DEFAULT_TAU

PROBES = ("kernel", "overlap", "stereo", "sweep", "corpus")
DEFAULT_SCENE_KINDS = {
    "stereo": ["periodic-texture"],
    "overlap": ["random-texture"],
    "sweep": ["random-texture"],
    "corpus": list(SCENE_KINDS),
    "kernel": [],
}
DEFAULT_INTERVENTIONS = [{"kind": "vanilla"}, {"kind": "zeroed"},
                         {"kind": "pairwise-shuffled"}, {"kind": "shuffled"}]


class ConfigError(ValueError):
    """Raised for any config validation failure (exit code 2)."""


def default_manifest_path() -> Path:
    return Path(str(resources.files("pegeo") / "data" / "default_corpus.json"))


@dataclass
class KernelOptions:
    method: str = "monte-carlo"
    samples: int = 10000
    content: str = "shared"
    tied: bool = False
    grid: list | None = None
    dim: int | None = None


@dataclass
class SweepOptions:
    probe_kind: str = "linear-softmax"
    ridge: float = 1e-3
    steps: int = 500
    lr: float = 0.1


@dataclass
class RunConfig:
    probe: str = "stereo"
    model: dict = field(default_factory=dict)
    schemes: list | None = None
    scheme: dict | None = None
    interventions: list | None = None
    corpus: str | None = None
    scene_kinds: list | None = None
    max_scenes: int | None = None
    out: str | None = None
    seeds: dict = field(default_factory=lambda: {"model": 0, "probe": 0})
    tau: float = DEFAULT_TAU
    weights: list = field(default_factory=lambda: list(WEIGHT_GRID))
    offsets: list = field(default_factory=lambda: list(OFFSETS))
    recall_n: list = field(default_factory=lambda: list(RECALL_N))
    disparity: dict = field(default_factory=lambda: {"kind": "constant", "value": 8.0})
    upsample: str = "none"
    layer: int = -1
    final_norm: bool = True
    rotary_weight_mode: str = "interpolated"
    kernel: KernelOptions = field(default_factory=KernelOptions)
    sweep: SweepOptions = field(default_factory=SweepOptions)

    def model_config(self, scheme: str | None = None) -> ToyViTConfig:
        kw = dict(self.model)
        kw["seed"] = self.seeds["model"]
        if scheme is not None:
            kw["scheme"] = scheme
        return ToyViTConfig(**kw)

    def effective(self) -> dict:
        """Defaults-filled config as embedded in reports; the output directory is left out."""
        d = asdict(self)
        d.pop("out")
        return d


def _sub(cls, raw, name):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{name} must be an object")
    known = {f.name for f in fields(cls)}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown {name} keys: {sorted(extra)}")
    return cls(**raw)


def from_dict(raw: dict, base_dir: Path | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = copy.deepcopy(raw)
    known = {f.name for f in fields(RunConfig)}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    raw["kernel"] = _sub(KernelOptions, raw.get("kernel"), "kernel")
    raw["sweep"] = _sub(SweepOptions, raw.get("sweep"), "sweep")
    if "seeds" in raw:
        seeds = {"model": 0, "probe": 0}
        seeds.update(raw["seeds"])
        raw["seeds"] = seeds
    cfg = RunConfig(**raw)
    if cfg.corpus is not None and base_dir is not None and not Path(cfg.corpus).is_absolute():
        cfg.corpus = str(base_dir / cfg.corpus)
    validate(cfg)
    return cfg


def load(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return from_dict(raw, path.parent)


def _ints(name, vals, lo=None):
    if not isinstance(vals, list) or not vals:
        raise ConfigError(f"{name} must be a non-empty list")
    for v in vals:
        if not isinstance(v, int) or isinstance(v, bool) or (lo is not None and v < lo):
            raise ConfigError(f"{name} entries must be integers >= {lo}")


def validate(cfg: RunConfig) -> RunConfig:
    """Fill per-probe defaults and check every field against module preconditions."""
    if cfg.probe not in PROBES:
        raise ConfigError(f"unknown probe {cfg.probe!r}; choose from {PROBES}")
    for key in ("model", "probe"):
        if not isinstance(cfg.seeds.get(key), int):
            raise ConfigError(f"seeds.{key} must be an integer")
    try:
        model = cfg.model_config()
        for s in cfg.schemes or []:
            cfg.model_config(s)
    except (TypeError, InvalidArgument) as exc:
        raise ConfigError(f"model: {exc}") from exc
    if cfg.schemes is None:
        cfg.schemes = [model.scheme]
    if cfg.scene_kinds is None:
        cfg.scene_kinds = list(DEFAULT_SCENE_KINDS[cfg.probe])
    bad = [k for k in cfg.scene_kinds if k not in SCENE_KINDS]
    if bad:
        raise ConfigError(f"unknown scene kinds {bad}")
    if cfg.corpus is None:
        cfg.corpus = str(default_manifest_path())
    if not Path(cfg.corpus).is_file():
        raise ConfigError(f"corpus manifest {cfg.corpus} does not exist")
    if cfg.max_scenes is not None and (not isinstance(cfg.max_scenes, int) or cfg.max_scenes < 1):
        raise ConfigError("max_scenes must be a positive integer")
    if not isinstance(cfg.tau, (int, float)) or not cfg.tau > 0:
        raise ConfigError("tau must be positive")
    if not isinstance(cfg.weights, list) or not cfg.weights or \
            any(not isinstance(w, (int, float)) or not 0.0 <= w <= 1.0 for w in cfg.weights):
        raise ConfigError("weights must be a non-empty list of values in [0, 1]")
    _ints("offsets", cfg.offsets, 0)
    g = model.grid
    if max(cfg.offsets) >= min(g.rows, g.cols):
        raise ConfigError(f"offsets must be smaller than the {g.rows}x{g.cols} grid")
    if cfg.probe == "overlap" and min(cfg.offsets) < 1:
        raise ConfigError("overlap offsets must be >= 1")
    _ints("recall_n", cfg.recall_n, 1)
    try:
        DisparityProfile.from_dict(cfg.disparity)
    except (InvalidArgument, TypeError, ValueError) as exc:
        raise ConfigError(f"disparity: {exc}") from exc
    if cfg.upsample not in ("none", "bilinear"):
        raise ConfigError("upsample must be 'none' or 'bilinear'")
    if not isinstance(cfg.layer, int) or not -(model.layers + 1) <= cfg.layer <= model.layers:
        raise ConfigError(f"layer must index 0..{model.layers}")
    if cfg.rotary_weight_mode not in ("interpolated", "phase-scaled"):
        raise ConfigError("rotary_weight_mode must be 'interpolated' or 'phase-scaled'")
    if cfg.interventions is None:
        cfg.interventions = copy.deepcopy(DEFAULT_INTERVENTIONS)
        for iv in cfg.interventions:
            if iv["kind"] in ("shuffled", "pairwise-shuffled"):
                iv["seed"] = cfg.seeds["probe"]
    if not isinstance(cfg.interventions, list) or not cfg.interventions:
        raise ConfigError("interventions must be a non-empty list")
    for iv in cfg.interventions:
        try:
            intervention_from_dict(iv)
        except (InvalidArgument, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"intervention {iv}: {exc}") from exc
    _validate_kernel(cfg)
    sw = cfg.sweep
    if sw.probe_kind not in ("linear-softmax", "one-hidden"):
        raise ConfigError("sweep.probe_kind must be 'linear-softmax' or 'one-hidden'")
    if not isinstance(sw.ridge, (int, float)) or not sw.ridge > 0:
        raise ConfigError("sweep.ridge must be > 0")
    if not isinstance(sw.steps, int) or sw.steps < 1 or not sw.lr > 0:
        raise ConfigError("sweep.steps must be >= 1 and sweep.lr > 0")
    return cfg


def _validate_kernel(cfg: RunConfig) -> None:
    k = cfg.kernel
    if k.method not in ("monte-carlo", "analytic"):
        raise ConfigError("kernel.method must be 'monte-carlo' or 'analytic'")
    if not isinstance(k.samples, int) or isinstance(k.samples, bool):
        raise ConfigError("kernel.samples must be an integer")
    if k.method == "monte-carlo" and k.samples < 1:
        raise ConfigError("kernel.samples must be >= 1 for monte-carlo")
    if k.content not in ("shared", "independent"):
        raise ConfigError("kernel.content must be 'shared' or 'independent'")
    if k.grid is not None and (not isinstance(k.grid, list) or len(k.grid) != 2
                               or any(not isinstance(v, int) or v < 1 for v in k.grid)):
        raise ConfigError("kernel.grid must be [rows, cols]")
    if k.dim is not None and (not isinstance(k.dim, int) or k.dim < 2 or k.dim % 2):
        raise ConfigError("kernel.dim must be a positive even integer")
    if cfg.scheme is not None and not isinstance(cfg.scheme, dict):
        raise ConfigError("scheme must be a descriptor object")
