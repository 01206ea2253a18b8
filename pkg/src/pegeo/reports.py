"""Probe reports and their JSON / CSV projections."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

SCHEMA_VERSION = 1


def config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class ProbeReport:
    probe: str
    config: dict
    conditions: list = field(default_factory=list)
    seeds: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    def add(self, name: str, condition: dict, metrics: dict) -> None:
        for key, val in metrics.items():
            if not math.isfinite(val):
                raise ValueError(f"metric {key} of condition {name} is not finite")
        self.conditions.append({"name": name, "config": condition, "metrics": metrics})

    def metrics(self, name: str) -> dict:
        for cond in self.conditions:
            if cond["name"] == name:
                return cond["metrics"]
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "probe": self.probe,
            "config_digest": config_digest(self.config),
            "config": self.config,
            "seeds": self.seeds,
            "conditions": self.conditions,
            "notes": self.notes,
            "timestamp": self.timestamp,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        """One row per condition: name, flattened condition config, then metrics."""
        cfg_keys = sorted({k for c in self.conditions for k in _flatten(c["config"])})
        met_keys = sorted({k for c in self.conditions for k in c["metrics"]})
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["probe", "condition"] + cfg_keys + met_keys)
        for c in self.conditions:
            flat = _flatten(c["config"])
            w.writerow([self.probe, c["name"]] + [flat.get(k, "") for k in cfg_keys]
                       + [repr(c["metrics"][k]) if k in c["metrics"] else "" for k in met_keys])
        return buf.getvalue()

    def write(self, out_dir, stem: str | None = None) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or self.probe
        jp, cp = out / f"{stem}.json", out / f"{stem}.csv"
        jp.write_text(self.to_json())
        cp.write_text(self.to_csv())
        return jp, cp


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = json.dumps(v) if isinstance(v, (list, tuple)) else v
    return out


def load_report(path) -> dict:
    return json.loads(Path(path).read_text())
