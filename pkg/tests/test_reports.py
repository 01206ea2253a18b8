import csv
import hashlib
import io
import json

import pytest

from pegeo.reports import SCHEMA_VERSION, ProbeReport, config_digest, load_report


def sample_report():
    rep = ProbeReport("overlap", {"model": {"dim": 64}, "offsets": [1, 2]}, seeds={"model": 0},
                      timestamp="2026-01-01T00:00:00+00:00")
    rep.add("vanilla/dx=1", {"dx": 1, "iv": {"kind": "vanilla"}}, {"mean_cosine": 0.5, "stderr": 0.01})
    rep.add("aligned/dx=1", {"dx": 1, "iv": {"kind": "reindexed", "dcol": 1}}, {"mean_cosine": 0.75})
    return rep


def test_digest_is_truncated_sha256_of_canonical_json():
    cfg = {"b": 1, "a": [1, 2]}
    expected = hashlib.sha256(b'{"a":[1,2],"b":1}').hexdigest()[:16]
    assert config_digest(cfg) == expected
    assert config_digest({"a": [1, 2], "b": 1}) == expected


def test_json_schema_fields():
    d = json.loads(sample_report().to_json())
    assert d["schema"] == SCHEMA_VERSION == 1
    assert set(d) == {"schema", "probe", "config_digest", "config", "seeds", "conditions", "notes", "timestamp"}
    assert d["conditions"][0] == {"name": "vanilla/dx=1", "config": {"dx": 1, "iv": {"kind": "vanilla"}},
                                  "metrics": {"mean_cosine": 0.5, "stderr": 0.01}}


def test_csv_is_flat_projection():
    rows = list(csv.reader(io.StringIO(sample_report().to_csv())))
    assert rows[0] == ["probe", "condition", "dx", "iv.dcol", "iv.kind", "mean_cosine", "stderr"]
    assert rows[1] == ["overlap", "vanilla/dx=1", "1", "", "vanilla", "0.5", "0.01"]
    assert rows[2] == ["overlap", "aligned/dx=1", "1", "1", "reindexed", "0.75", ""]


def test_non_finite_metrics_rejected():
    rep = ProbeReport("x", {})
    with pytest.raises(ValueError):
        rep.add("c", {}, {"epe": float("nan")})


def test_metrics_lookup():
    rep = sample_report()
    assert rep.metrics("aligned/dx=1") == {"mean_cosine": 0.75}
    with pytest.raises(KeyError):
        rep.metrics("missing")


def test_write_and_load(tmp_path):
    jp, cp = sample_report().write(tmp_path)
    assert jp.name == "overlap.json" and cp.name == "overlap.csv"
    assert load_report(jp)["probe"] == "overlap"
