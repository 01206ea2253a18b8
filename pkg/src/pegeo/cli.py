"""Command-line entry point: config -> probes -> reports on disk.

    pegeo --config run.json --out results/ [--probe stereo] [--seed 3] [--dump-slices]

Exit codes: 0 success, 2 config validation failure, 3 probe failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .attnlab import build_projection_pair, expected_kernel
from .config import ConfigError, RunConfig
from .grid import GridShape, InvalidArgument
from .posenc import scheme_from_descriptor, scheme_to_descriptor
from .probes import (offset_reconstruction, offset_sweep, overlap_probe, parallel_map,
                     position_decodability, stereo_correspondence, stereo_probe, view_crop)
from .reports import SCHEMA_VERSION, ProbeReport, config_digest
from .synth import (DisparityProfile, SceneSpec, load_manifest, make_scene, make_stereo_pair,
                    save_image)
from .tensorio import write_tensor
from .toyvit import Vanilla, build_model, forward, intervention_from_dict

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
CONSISTENT = "direction consistent with reference ordering (vanilla EPE < zeroed EPE)"
INCONSISTENT = "direction NOT consistent with reference ordering (vanilla EPE >= zeroed EPE)"


def _scenes(cfg: RunConfig) -> list[tuple[SceneSpec, np.ndarray]]:
    specs = [s for s in load_manifest(cfg.corpus) if s.kind in cfg.scene_kinds]
    if cfg.max_scenes is not None:
        specs = specs[:cfg.max_scenes]
    if not specs:
        raise ConfigError("corpus is empty after filtering by scene kind")
    return list(zip(specs, parallel_map(make_scene, specs)))


def _merge(probe: str, cfg: RunConfig, parts: list[tuple[str, ProbeReport]]) -> ProbeReport:
    """One report over all schemes; condition names gain a scheme prefix."""
    report = ProbeReport(probe, cfg.effective(), seeds=dict(cfg.seeds))
    for scheme, part in parts:
        for cond in part.conditions:
            report.add(f"{scheme}/{cond['name']}", {"scheme": scheme, **cond["config"]}, cond["metrics"])
        for note in part.notes:
            if note not in report.notes:
                report.notes.append(note)
    return report


# --- kernel ------------------------------------------------------------------

def _kernel_scheme(cfg: RunConfig):
    """Scheme, projection dim and grid for the kernel command."""
    mc = cfg.model_config()
    desc = cfg.scheme
    if desc is None:
        dim = cfg.kernel.dim or mc.dim
        grid = cfg.kernel.grid or [mc.grid.rows, mc.grid.cols]
        desc = {"kind": mc.scheme, "shape": grid, "dim": dim, "heads": 1,
                "seed": cfg.seeds["model"], "mode": mc.rotary_mode}
    try:
        scheme = scheme_from_descriptor(desc)
    except (InvalidArgument, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"scheme descriptor: {exc}") from exc
    dim = getattr(scheme, "dim", None) or cfg.kernel.dim or mc.dim
    if cfg.kernel.grid is not None:
        shape = GridShape(*cfg.kernel.grid)
    else:
        shape = getattr(scheme, "shape", None) or mc.grid
    return scheme, dim, shape


def _matrix_csv(mat: np.ndarray, shape: GridShape) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["query", "row", "col"] + [f"t{j}" for j in range(mat.shape[1])])
    for i, (r, c) in enumerate(shape.positions()):
        w.writerow([i, int(r), int(c)] + [repr(float(v)) for v in mat[i]])
    return buf.getvalue()


def _stationarity_gap(mat: np.ndarray, shape: GridShape) -> float:
    """Largest spread among kernel entries that share a displacement."""
    pos = shape.positions()
    disp = pos[None, :, :] - pos[:, None, :]
    keys = disp[..., 0] * (2 * shape.cols + 1) + disp[..., 1]
    gap = 0.0
    for key in np.unique(keys):
        vals = mat[keys == key]
        gap = max(gap, float(vals.max() - vals.min()))
    return gap


def cmd_kernel(cfg: RunConfig, out: Path) -> list[Path]:
    scheme, dim, shape = _kernel_scheme(cfg)
    k = cfg.kernel
    proj = build_projection_pair(dim, cfg.seeds["probe"], tied=k.tied)
    res = expected_kernel(scheme, proj, k.method, k.samples, cfg.seeds["probe"], shape, k.content)
    out.mkdir(parents=True, exist_ok=True)
    paths = [write_tensor(out / "kernel.pgt", res.kernel)]
    (out / "kernel.csv").write_text(_matrix_csv(res.kernel, shape))
    paths.append(out / "kernel.csv")
    if res.stderr is not None:
        paths.append(write_tensor(out / "kernel_stderr.pgt", res.stderr))
    effective = cfg.effective()
    summary = {
        "schema": SCHEMA_VERSION, "probe": "kernel", "config_digest": config_digest(effective),
        "config": effective, "method": res.method, "samples": res.samples, "seed": res.seed,
        "content": res.content, "scheme": scheme_to_descriptor(scheme), "grid": [shape.rows, shape.cols],
        "stationarity_gap": _stationarity_gap(res.kernel, shape),
    }
    if res.lambdas is not None:
        summary["lambdas"] = res.lambdas.tolist()
    if res.stderr is not None:
        summary["max_stderr"] = float(res.stderr.max())
    (out / "kernel.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    paths.append(out / "kernel.json")
    return paths


# --- probes ----------------------------------------------------------------------

def cmd_overlap(cfg: RunConfig, out: Path) -> list[Path]:
    images = [img for _, img in _scenes(cfg)]
    parts = []
    for scheme in cfg.schemes:
        model = build_model(cfg.model_config(scheme))
        parts.append((scheme, overlap_probe(model, images, cfg.offsets, cfg.layer, cfg.final_norm)))
    return list(_merge("overlap", cfg, parts).write(out))


def _stereo_pairs(cfg: RunConfig, model) -> list:
    profile = DisparityProfile.from_dict(cfg.disparity)
    mc = model.config
    return [make_stereo_pair(img, profile, mc.image_size, mc.patch_size) for _, img in _scenes(cfg)]


def _dump_slices(cfg: RunConfig, model, scheme: str, pair, interventions, out: Path) -> list[Path]:
    sdir = out / "slices"
    sdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for iv in interventions:
        for layer in range(model.config.layers + 1):
            sl = stereo_correspondence(model, pair, iv, cfg.tau, cfg.upsample, layer, cfg.final_norm)[0]
            paths.append(write_tensor(sdir / f"{scheme}__{iv.kind}__layer{layer}.pgt", sl))
    return paths


def stereo_direction(report: ProbeReport, scheme: str) -> str | None:
    try:
        vanilla = report.metrics(f"{scheme}/vanilla")["epe"]
        zeroed = report.metrics(f"{scheme}/zeroed")["epe"]
    except KeyError:
        return None
    return CONSISTENT if vanilla < zeroed else INCONSISTENT


def cmd_stereo(cfg: RunConfig, out: Path, dump_slices: bool = False) -> list[Path]:
    interventions = [intervention_from_dict(d) for d in cfg.interventions]
    parts, paths = [], []
    for scheme in cfg.schemes:
        model = build_model(cfg.model_config(scheme))
        pairs = _stereo_pairs(cfg, model)
        parts.append((scheme, stereo_probe(model, pairs, interventions, cfg.tau, cfg.upsample,
                                           tuple(cfg.recall_n), cfg.layer,
                                           final_norm=cfg.final_norm)))
        if dump_slices:
            paths += _dump_slices(cfg, model, scheme, pairs[0], interventions, out)
    report = _merge("stereo", cfg, parts)
    for scheme in cfg.schemes:
        verdict = stereo_direction(report, scheme)
        if verdict is not None:
            report.notes.append(f"{scheme}: {verdict}")
            print(f"{scheme}: {verdict}")
    return list(report.write(out)) + paths


def cmd_sweep(cfg: RunConfig, out: Path) -> list[Path]:
    images = [img for _, img in _scenes(cfg)]
    sw = cfg.sweep
    sweeps, decode, recon = [], [], []
    for scheme in cfg.schemes:
        model = build_model(cfg.model_config(scheme))
        sweeps.append((scheme, offset_sweep(model, images, cfg.offsets, cfg.weights, cfg.layer,
                                            cfg.rotary_weight_mode, final_norm=cfg.final_norm)))
        views = [view_crop(img, model.config.image_size) for img in images]
        per_image = parallel_map(lambda v: forward(model, v, Vanilla(), 0, cfg.final_norm), views)
        dec = ProbeReport("decodability", {})
        for layer in range(model.config.layers + 1):
            grids = [grids_l[layer] for grids_l in per_image]
            acc = position_decodability(grids, sw.probe_kind, cfg.seeds["probe"], sw.steps, sw.lr)
            dec.add(f"layer={layer}", {"layer": layer, "probe_kind": sw.probe_kind}, acc)
        decode.append((scheme, dec))
        rec = ProbeReport("reconstruction", {})
        grids = [grids_l[cfg.layer] for grids_l in per_image]
        for k in cfg.offsets:
            cos, base = offset_reconstruction(grids, k, sw.ridge, cfg.seeds["probe"])
            rec.add(f"k={k}", {"k": k, "ridge": sw.ridge, "layer": cfg.layer},
                    {"reconstruction_cosine": cos, "baseline_cosine": base})
        recon.append((scheme, rec))
    paths = []
    for name, parts in (("offset_sweep", sweeps), ("decodability", decode), ("reconstruction", recon)):
        paths += list(_merge(name, cfg, parts).write(out))
    return paths


def cmd_corpus(cfg: RunConfig, out: Path) -> list[Path]:
    """Persist scenes and rectified pairs as flat float32 images with JSON sidecars."""
    mc = cfg.model_config()
    profile = DisparityProfile.from_dict(cfg.disparity)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for spec, img in _scenes(cfg):
        stem = f"{spec.kind}_{spec.seed:03d}"
        save_image(out / f"{stem}.f32", img, spec.to_dict())
        pair = make_stereo_pair(img, profile, mc.image_size, mc.patch_size)
        meta = {**spec.to_dict(), "disparity_profile": profile.to_dict()}
        save_image(out / f"{stem}_left.f32", pair.left, {**meta, "view": "left"})
        save_image(out / f"{stem}_right.f32", pair.right, {**meta, "view": "right"})
        paths.append(out / f"{stem}.f32")
    return paths


COMMANDS = {"kernel": cmd_kernel, "overlap": cmd_overlap, "stereo": cmd_stereo,
            "sweep": cmd_sweep, "corpus": cmd_corpus}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pegeo", description="Positional-embedding geometry probes on a toy ViT.")
    p.add_argument("--config", type=Path, help="JSON run config (defaults used when omitted)")
    p.add_argument("--out", type=Path, help="output directory (overrides config 'out')")
    p.add_argument("--seed", type=int, help="overrides both model and probe seeds")
    p.add_argument("--probe", choices=sorted(COMMANDS), help="which probe to run (overrides config 'probe')")
    p.add_argument("--dump-slices", action="store_true", help="stereo: dump per-layer epipolar slices of the first pair")
    return p


def load_run_config(args) -> RunConfig:
    if args.config is not None:
        if not args.config.is_file():
            raise ConfigError(f"config file {args.config} does not exist")
        try:
            raw = json.loads(args.config.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        base = args.config.parent
    else:
        raw, base = {}, None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if args.probe:
        raw["probe"] = args.probe
    if args.seed is not None:
        raw["seeds"] = {"model": args.seed, "probe": args.seed}
    if args.out is not None:
        raw["out"] = str(args.out)
    cfg = cfgmod.from_dict(raw, base)
    if not cfg.out:
        raise ConfigError("an output directory is required (--out or config 'out')")
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.out)
    try:
        if cfg.probe == "stereo":
            paths = cmd_stereo(cfg, out, args.dump_slices)
        else:
            paths = COMMANDS[cfg.probe](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvalidArgument, ValueError, ArithmeticError) as exc:
        print(f"probe failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for path in paths:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
