import json
from pathlib import Path

import pytest

from cachesnap.cli import main
from cachesnap.config import ConfigError, parse_config

TINY = """\
[experiment]
kind = single
seed = 5
output = {out}

[scheduler]
kind = cfs
cores = 1

[trigger]
mode = periodic
period = 2048

[shutter]
flush = true
sync = true
resolve = true
layout = true
hard_invalidate = true

[workload:synth]
pid = 1
benchmark = synth
affinity = 0
buffer_kb = 128
iterations = 1
"""


def write_tiny(tmp_path, name="tiny.cfg", out="store", extra=""):
    cfg = tmp_path / name
    cfg.write_text(TINY.format(out=tmp_path / out) + extra)
    return cfg


def run_tiny(tmp_path, out="store"):
    cfg = write_tiny(tmp_path, out=out)
    assert main(["run", str(cfg)]) == 0
    return tmp_path / out


def test_parse_config_defaults_and_units(tmp_path):
    cfg = tmp_path / "a.cfg"
    cfg.write_text(
        "[experiment]\nkind = single\nseed = 9\noutput = o\n"
        "[geometry]\ntotal_size = 1 MB\nways = 8\nline_size = 64 B\nphys_addr_bits = 40\n"
        "[workload:w]\npid = 1\nbenchmark = track_like\n"
    )
    c = parse_config(cfg)
    assert c.geometry.total_size == 1024 * 1024
    assert c.geometry.ways == 8
    assert c.policy == "true_random"
    assert c.scheduler.kind == "cfs"
    assert c.trigger_mode == "periodic"
    assert c.workloads[0].benchmark == "track_like"


MINIMAL = (
    "[experiment]\nkind = single\nseed = 5\noutput = o\n"
    "[workload:w]\npid = 1\nbenchmark = track_like\n"
)


@pytest.mark.parametrize(
    "snippet,fragment",
    [
        ("[bogus]\nx = 1\n", "unknown section"),
        ("[shutter]\nwhatever = 1\n", "unknown key"),
        ("[geometry]\ntotal_size = 3 MB\n", "power of two"),
        ("[cache]\npolicy = biased_random\n", "requires weights"),
        ("[trigger]\nmode = sometimes\n", "unknown mode"),
        ("[scheduler]\nkind = lottery\n", "unknown scheduler"),
        ("[workload:w2]\npid = 1\nbenchmark = bomb\n", "unique"),
        ("[trigger]\nperiod = oops\n", "bad integer"),
        ("[geometry]\nline_size = 64 bytes\n", "bad size"),
    ],
)
def test_config_rejects_bad_input(tmp_path, snippet, fragment):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(MINIMAL + snippet)
    with pytest.raises(ConfigError) as e:
        parse_config(cfg)
    assert fragment in str(e.value)


def test_config_requires_seed_output_and_workloads(tmp_path):
    cfg = tmp_path / "b.cfg"
    cfg.write_text("[experiment]\nkind = single\nseed = 1\noutput = o\n")
    with pytest.raises(ConfigError, match="workload"):
        parse_config(cfg)
    cfg.write_text("[experiment]\nkind = single\noutput = o\n")
    with pytest.raises(ConfigError, match="seed"):
        parse_config(cfg)


def test_cli_run_writes_store_and_verify_passes(tmp_path, capsys):
    store = run_tiny(tmp_path)
    snaps = sorted((store / "snapshots").glob("*.cfsnap"))
    assert snaps
    assert all(p.stat().st_size == 32 + 16 * 32768 for p in snaps)
    assert (store / "manifest.json").exists()
    assert (store / "runresult.json").exists()
    manifest = json.loads((store / "manifest.json").read_text())
    assert manifest["geometry"]["ways"] == 16
    assert main(["verify", str(store)]) == 0
    out = capsys.readouterr().out
    assert "pass format" in out and "pass attribution" in out


def test_cli_invalid_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[experiment]\nkind = single\nseed = 1\n")
    assert main(["run", str(bad)]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_capacity_overflow_exits_2(tmp_path, capsys):
    cfg = tmp_path / "cap.cfg"
    cfg.write_text(
        f"[experiment]\nkind = single\nseed = 3\noutput = {tmp_path/'capstore'}\n"
        "[trigger]\nmode = periodic\nperiod = 1024\n"
        "[shutter]\nflush = false\nreserved_snapshots = 2\n"
        "[workload:w]\npid = 1\nbenchmark = track_like\n"
    )
    assert main(["run", str(cfg)]) == 2
    assert "capacity" in capsys.readouterr().err


def test_cli_analyze_occupancy_and_unknown_analysis(tmp_path, capsys):
    store = run_tiny(tmp_path)
    capsys.readouterr()
    assert main(["analyze", str(store), "occupancy"]) == 0
    path = Path(capsys.readouterr().out.strip().splitlines()[-1])
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# schema: snapshot,pid,lines")
    # rows for one snapshot sum to the line count
    rows = [l.split(",") for l in lines if l and not l.startswith(("#", "snapshot"))]
    snap0 = [int(v) for t, _, v in rows if t == "0"]
    assert sum(snap0) == 32768
    assert main(["analyze", str(store), "nonsense"]) == 1
    err = capsys.readouterr().err
    assert "heatmap" in err and "way-freq" in err


def test_cli_analyze_heatmap_missing_params(tmp_path, capsys):
    store = run_tiny(tmp_path)
    assert main(["analyze", str(store), "heatmap"]) == 1
    assert "--pid" in capsys.readouterr().err


def test_verify_detects_bit_flip_as_attribution_failure(tmp_path, capsys):
    store = run_tiny(tmp_path)
    victim = sorted((store / "snapshots").glob("*.cfsnap"))[-1]
    data = bytearray(victim.read_bytes())
    # find an attributed record and flip a high bit of its address
    import numpy as np

    from cachesnap.shutter import deserialize

    snap = deserialize(bytes(data))
    idx = int(np.flatnonzero(snap.pids == 1)[0])
    off = 32 + idx * 16 + 8 + 5
    data[off] ^= 0xFF
    victim.write_bytes(bytes(data))
    assert main(["verify", str(store)]) == 4
    out = capsys.readouterr().out
    assert "FAIL attribution" in out
    assert f"record {idx}" in out and victim.name in out


def test_verify_detects_truncation_as_corruption(tmp_path, capsys):
    store = run_tiny(tmp_path)
    victim = sorted((store / "snapshots").glob("*.cfsnap"))[0]
    victim.write_bytes(victim.read_bytes()[:-100])
    assert main(["verify", str(store)]) == 3
    assert "FAIL format" in capsys.readouterr().out


def test_cli_recipes_list(capsys):
    assert main(["recipes", "list"]) == 0
    out = capsys.readouterr().out
    for name in ("synth_flush.cfg", "interference.cfg", "repl_density.cfg",
                 "repl_way_freq.cfg", "overhead_transparent.cfg"):
        assert name in out


def test_all_shipped_recipes_parse():
    from cachesnap.cli import recipe_dir

    recipes = sorted(p for p in recipe_dir().iterdir() if p.name.endswith(".cfg"))
    assert len(recipes) >= 10
    kinds = set()
    for path in recipes:
        cfg = parse_config(path)
        kinds.add(cfg.kind)
        assert cfg.seed is not None
    assert kinds == {"single", "interference", "repl_density", "way_freq"}


def test_output_root_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("CACHESNAP_OUT", str(tmp_path / "rooted"))
    cfg = tmp_path / "c.cfg"
    cfg.write_text(TINY.format(out="rel_store"))
    assert main(["run", str(cfg)]) == 0
    assert (tmp_path / "rooted" / "rel_store" / "manifest.json").exists()


def test_run_is_deterministic_byte_for_byte(tmp_path):
    a = run_tiny(tmp_path, out="store_a")
    b = run_tiny(tmp_path, out="store_b")
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        if rel.name == "manifest.json":
            # config text embeds the output path; ignore only that field
            ma = json.loads((a / rel).read_text())
            mb = json.loads((b / rel).read_text())
            ma.pop("config_sha256")
            mb.pop("config_sha256")
            assert ma == mb
        else:
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
