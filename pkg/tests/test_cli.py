"""Command-line behavior: exit codes, precedence, manifests, reproducibility."""
import json
import subprocess
import sys

import numpy as np
import pytest

from mixedsynth.cli import (
    ConfigError,
    StageError,
    _build_parser,
    _config_hash,
    _csv_list,
    _int_list,
    _merge_config,
    end_to_end,
    main,
)
from mixedsynth.schema import ColumnSchema, Kind, MixedDataset, load_dataset, write_csv

_SCHEMA_DOC = {
    "columns": [
        {"name": "g", "kind": "categorical", "levels": ["a", "b", "c"]},
        {"name": "y", "kind": "count"},
        {"name": "w", "kind": "continuous"},
        {"name": "r", "kind": "count", "role": "response"},
    ]
}


def _make_inputs(root):
    rng = np.random.default_rng(0)
    n = 200
    g = rng.integers(0, 3, n)
    ds = MixedDataset(
        tuple(
            ColumnSchema(d["name"], Kind(d["kind"]),
                         tuple(d["levels"]) if "levels" in d else None,
                         d.get("role", "copula"))
            for d in _SCHEMA_DOC["columns"]
        ),
        {
            "g": g,
            "y": rng.poisson(4.0 + 2.0 * g).astype(np.int64),
            "w": rng.normal(0.5 * g, 1.0),
            "r": rng.poisson(np.exp(0.3 * g) + 1.0).astype(np.int64),
        },
    )
    data = root / "conf.csv"
    write_csv(ds, data)
    schema = root / "schema.json"
    schema.write_text(json.dumps(_SCHEMA_DOC))
    return data, schema


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, schema = _make_inputs(root)
    archive = root / "model.mxs"
    rc = main([
        "fit", "--data", str(data), "--schema", str(schema),
        "--out", str(archive), "--seed", "3",
        "--iters", "300", "--burn-in", "150", "--thin", "5",
        "--target-iters", "60", "--target-burn-in", "10", "--target-trees", "6",
    ])
    assert rc == 0 and archive.exists()

    syn_dir = root / "syn"
    rc = main([
        "synth", "--model", str(archive), "--out-dir", str(syn_dir),
        "--m", "3", "--seed", "11",
    ])
    assert rc == 0
    return {"root": root, "data": data, "schema": schema,
            "archive": archive, "syn_dir": syn_dir}


def test_synth_outputs_and_manifest(workspace):
    syn_dir = workspace["syn_dir"]
    manifest = json.loads((syn_dir / "manifest.json").read_text())
    assert manifest["seed"] == 11
    assert len(manifest["config_hash"]) == 16
    assert manifest["files"] == [f"data_syn_{i}.csv" for i in range(3)]
    from mixedsynth.schema import load_schema

    schema = load_schema(workspace["schema"])
    for name in manifest["files"]:
        ds = load_dataset(syn_dir / name, schema)
        assert ds.n == 200
        assert [c.name for c in ds.schema] == ["g", "y", "w", "r"]


def test_synth_byte_reproducible(workspace, tmp_path):
    args = ["synth", "--model", str(workspace["archive"]), "--m", "2",
            "--seed", "11"]
    a_dir, b_dir = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--out-dir", str(a_dir)]) == 0
    assert main(args + ["--out-dir", str(b_dir)]) == 0
    for i in range(2):
        fa = (a_dir / f"data_syn_{i}.csv").read_bytes()
        fb = (b_dir / f"data_syn_{i}.csv").read_bytes()
        assert fa == fb
    # same knobs, different out dir: identical manifests (paths are unhashed)
    ma = json.loads((a_dir / "manifest.json").read_text())
    mb = json.loads((b_dir / "manifest.json").read_text())
    assert ma == mb

    c_dir = tmp_path / "c"
    assert main(["synth", "--model", str(workspace["archive"]), "--m", "2",
                 "--seed", "12", "--out-dir", str(c_dir)]) == 0
    fc = (c_dir / "data_syn_0.csv").read_bytes()
    assert fc != (a_dir / "data_syn_0.csv").read_bytes()


def test_utility_command(workspace, tmp_path):
    out = tmp_path / "utility.json"
    rc = main([
        "utility", "--conf", str(workspace["data"]),
        "--schema", str(workspace["schema"]),
        "--syn-dir", str(workspace["syn_dir"]),
        "--response", "w", "--predictors", "g,y",
        "--iters", "400", "--burn-in", "200", "--seed", "0",
        "--out", str(out),
    ])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert doc["m"] == 3
    assert 0.0 <= doc["U"] <= 1.0
    assert doc["pmse"] >= 0.0
    assert "per_coefficient" in doc and len(doc["config_hash"]) == 16


def test_risk_command(workspace, tmp_path):
    out = tmp_path / "risk.json"
    rc = main([
        "risk", "--conf", str(workspace["data"]),
        "--schema", str(workspace["schema"]),
        "--pool-dir", str(workspace["syn_dir"]),
        "--known", "g,y", "--target", "r",
        "--m", "2,3", "--eps", "0,1", "--reps", "2", "--seed", "4",
        "--out", str(out),
    ])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert doc["known"] == ["g", "y"]
    got = {(c["m"], c["epsilon"]) for c in doc["cells"]}
    assert {(2, 0), (2, 1), (3, 0), (3, 1)} <= got
    for c in doc["cells"]:
        assert 0.0 <= c["cmap_syn"] <= 1.0


def test_missing_seed_is_config_error(workspace, tmp_path):
    rc = main(["synth", "--model", str(workspace["archive"]),
               "--out-dir", str(tmp_path / "x")])
    assert rc == 1


def test_missing_required_path_is_config_error():
    assert main(["fit", "--seed", "0"]) == 1


def test_unknown_flag_and_subcommand():
    assert main(["fit", "--does-not-exist", "1"]) == 1
    assert main(["transmogrify"]) == 1
    assert main([]) == 1


def test_bad_archive_is_stage_failure(tmp_path):
    junk = tmp_path / "junk.mxs"
    junk.write_bytes(b"not an archive")
    rc = main(["synth", "--model", str(junk), "--out-dir", str(tmp_path / "o"),
               "--seed", "0"])
    assert rc == 2
    rc = main(["synth", "--model", str(tmp_path / "missing.mxs"),
               "--out-dir", str(tmp_path / "o"), "--seed", "0"])
    assert rc == 2


def test_categorical_target_rejected(workspace, tmp_path):
    rc = main([
        "fit", "--data", str(workspace["data"]),
        "--schema", str(workspace["schema"]),
        "--out", str(tmp_path / "m.mxs"), "--seed", "0",
        "--iters", "50", "--burn-in", "10", "--thin", "2",
        "--targets", "g",
    ])
    assert rc == 2  # schema violation inside the stage, not a flag problem


def test_unknown_target_rejected(workspace, tmp_path):
    rc = main([
        "fit", "--data", str(workspace["data"]),
        "--schema", str(workspace["schema"]),
        "--out", str(tmp_path / "m.mxs"), "--seed", "0",
        "--targets", "nope",
    ])
    assert rc == 1


def test_config_file_and_flag_precedence(workspace, tmp_path):
    cfg_file = tmp_path / "synth.json"
    cfg_file.write_text(json.dumps({"m": 4, "seed": 11}))
    out_dir = tmp_path / "from_file"
    rc = main(["synth", "--model", str(workspace["archive"]),
               "--config", str(cfg_file), "--out-dir", str(out_dir)])
    assert rc == 0
    assert len(list(out_dir.glob("*_syn_*.csv"))) == 4

    out_dir2 = tmp_path / "flag_wins"
    rc = main(["synth", "--model", str(workspace["archive"]),
               "--config", str(cfg_file), "--out-dir", str(out_dir2),
               "--m", "1"])
    assert rc == 0
    assert len(list(out_dir2.glob("*_syn_*.csv"))) == 1


def test_preset_merging_order():
    parser = _build_parser()
    args = parser.parse_args([
        "fit", "--preset", "desk", "--iters", "77",
        "--data", "d.csv", "--schema", "s.json", "--out", "m.mxs",
    ])
    cfg = _merge_config(args, {"iters": 15000, "burn_in": 9000, "thin": 10,
                               "target_iters": 1100, "target_burn_in": 100,
                               "target_trees": 200})
    assert cfg["iters"] == 77          # explicit flag beats the preset
    assert cfg["burn_in"] == 1500      # preset beats the default
    assert cfg["thin"] == 5
    assert cfg["target_trees"] == 200  # untouched default survives


def test_bad_config_file(workspace, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2, 3]")
    rc = main(["synth", "--model", str(workspace["archive"]),
               "--out-dir", str(tmp_path / "o"), "--seed", "0",
               "--config", str(bad)])
    assert rc == 1
    rc = main(["synth", "--model", str(workspace["archive"]),
               "--out-dir", str(tmp_path / "o"), "--seed", "0",
               "--config", str(tmp_path / "missing.json")])
    assert rc == 1


def test_config_hash_ignores_output_paths():
    base = {"m": 3, "seed": 1, "out_dir": "/a", "model": "m.mxs"}
    moved = dict(base, out_dir="/somewhere/else", config="x.json")
    assert _config_hash(base) == _config_hash(moved)
    assert _config_hash(dict(base, m=4)) != _config_hash(base)
    assert len(_config_hash(base)) == 16


def test_list_parsing():
    assert _csv_list("a, b ,c") == ["a", "b", "c"]
    assert _csv_list(None) == []
    assert _csv_list(["x", "y"]) == ["x", "y"]
    assert _int_list("1, 2,3") == [1, 2, 3]
    with pytest.raises(ConfigError):
        _int_list("1,zap")


def test_simulate_command_smoke(tmp_path):
    out = tmp_path / "sim.json"
    keep = tmp_path / "kept"
    rc = main([
        "simulate", "--preset", "desk", "--reps", "2", "--studies", "rpl",
        "--seed", "1", "--keep-datasets", str(keep), "--out", str(out),
    ])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert doc["preset"] == "desk"
    assert doc["design"]["n"] == 1000
    assert doc["design"]["n_reps"] == 2
    assert set(doc["studies"]) == {"rpl"}
    assert doc["studies"]["rpl"]["multi_rate"] == 0.0
    assert "orderings" not in doc  # needs both rpl and rl
    assert len(list((keep / "rpl").glob("rpl_syn_*.csv"))) == 2


def test_simulate_rejects_unknown_study(tmp_path):
    rc = main(["simulate", "--studies", "rpl,bogus", "--seed", "0",
               "--out", str(tmp_path / "s.json")])
    assert rc == 1


def test_end_to_end_bundle(workspace, tmp_path):
    bundle = {
        "seed": 5,
        "fit": {
            "data": str(workspace["data"]),
            "schema": str(workspace["schema"]),
            "out": str(tmp_path / "m.mxs"),
            "iters": 200, "burn_in": 100, "thin": 4,
            "target_iters": 40, "target_burn_in": 5, "target_trees": 4,
        },
        "synth": {
            "model": str(tmp_path / "m.mxs"),
            "out_dir": str(tmp_path / "syn"),
            "m": 2,
        },
        "utility": {
            "conf": str(workspace["data"]),
            "schema": str(workspace["schema"]),
            "syn_dir": str(tmp_path / "syn"),
            "response": "w", "predictors": "g,y",
            "iters": 300, "burn_in": 100,
            "out": str(tmp_path / "u.json"),
        },
        "risk": {
            "conf": str(workspace["data"]),
            "schema": str(workspace["schema"]),
            "pool_dir": str(tmp_path / "syn"),
            "known": "g,y", "target": "r",
            "m": "2", "eps": "0,1", "reps": 2,
            "out": str(tmp_path / "r.json"),
        },
    }
    results = end_to_end(bundle)
    assert set(results) == {"fit", "synth", "utility", "risk"}
    assert (tmp_path / "u.json").exists() and (tmp_path / "r.json").exists()


def test_end_to_end_names_failing_stage(workspace, tmp_path):
    junk = tmp_path / "junk.mxs"
    junk.write_bytes(b"garbage")
    bundle = {
        "seed": 5,
        "synth": {"model": str(junk), "out_dir": str(tmp_path / "syn"), "m": 1},
    }
    with pytest.raises(StageError) as err:
        end_to_end(bundle)
    assert err.value.stage == "synth"


def test_console_entry_point_help():
    proc = subprocess.run(
        [sys.executable, "-m", "mixedsynth.cli", "--help"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "fit" in proc.stdout and "simulate" in proc.stdout
