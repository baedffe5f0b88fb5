import csv
import json
from pathlib import Path

import pytest

from slabhybrid.cli import main

CFG = """
[problem]
length = 1.0

[region.1]
x_left = 0.0
x_right = 1.0
sigma_t = 1.0
sigma_s = 0.9
q = 1.0

[run]
cells = 8
histories = 2000
seed = 7
capture_mode = implicit

[study]
histories = 100, 500
cells = 4, 8
replicates = 3
capture_mode = analog
master_seed = 2
"""


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "bench.cfg"
    path.write_text(CFG)
    return path


def _rundirs(root):
    return [p for p in Path(root).iterdir() if p.is_dir()]


def test_hybrid_subcommand(cfg_path, tmp_path):
    out = tmp_path / "out"
    rc = main([
        "hybrid", "--config", str(cfg_path), "--method", "hqd",
        "--histories", "1000", "--cells", "4", "--seed", "3",
        "--out", str(out), "--workers", "2",
    ])
    assert rc == 0
    (rundir,) = _rundirs(out)
    assert rundir.name.startswith("hybrid-") and rundir.name.endswith("-s3")
    assert (rundir / "solution_hqd.csv").exists()
    assert (rundir / "closures.csv").exists()
    assert (rundir / "manifest.json").exists()
    errors = json.loads((rundir / "errors.json").read_text())
    assert "hqd" in errors and "mc" in errors
    with open(rundir / "solution_hqd.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    assert rows[0]["method"] == "hqd"
    assert rows[0]["seed"] == "3"


def test_hybrid_both_methods_default(cfg_path, tmp_path):
    out = tmp_path / "out"
    rc = main(["hybrid", "--config", str(cfg_path), "--histories", "500", "--out", str(out)])
    assert rc == 0
    (rundir,) = _rundirs(out)
    assert (rundir / "solution_hqd.csv").exists()
    assert (rundir / "solution_hsm.csv").exists()


def test_mc_subcommand_with_tally_dump(cfg_path, tmp_path):
    out = tmp_path / "out"
    rc = main([
        "mc", "--config", str(cfg_path), "--histories", "500", "--cells", "4",
        "--dump-tallies", "--out", str(out),
    ])
    assert rc == 0
    (rundir,) = _rundirs(out)
    assert (rundir / "mc_flux.csv").exists()
    assert (rundir / "tallies.csv").exists()


def test_reference_subcommand(tmp_path):
    out = tmp_path / "out"
    rc = main(["reference", "--cells", "4", "--out", str(out)])
    assert rc == 0
    (rundir,) = _rundirs(out)
    with open(rundir / "reference_I4.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    assert all(int(r["certified_digits"]) >= 6 for r in rows)
    ladder = json.loads((rundir / "reference_I4_ladder.json").read_text())
    assert ladder["certified_digits"] >= 6
    assert len(ladder["ladder"]) >= 3


def test_reference_certification_failure_exit_code(tmp_path):
    rc = main(["reference", "--cells", "4", "--min-digits", "14", "--out", str(tmp_path / "o")])
    assert rc == 3


def test_study_subcommand(cfg_path, tmp_path):
    out = tmp_path / "out"
    rc = main(["study", "--config", str(cfg_path), "--out", str(out)])
    assert rc == 0
    (rundir,) = _rundirs(out)
    for name in ("errors.csv", "win_ratio.csv", "error_means.csv",
                 "error_ratios.csv", "sorted_errors.csv", "manifest.json"):
        assert (rundir / name).exists(), name


def test_dump_closures_subcommand(cfg_path, tmp_path):
    out = tmp_path / "out"
    rc = main(["dump-closures", "--config", str(cfg_path), "--histories", "300", "--out", str(out)])
    assert rc == 0
    (rundir,) = _rundirs(out)
    assert (rundir / "closures.csv").exists()


def test_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[problem]\nlength = -1\n")
    rc = main(["mc", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert rc == 2


def test_missing_config_exit_code(tmp_path):
    rc = main(["mc", "--config", str(tmp_path / "absent.cfg"), "--out", str(tmp_path / "o")])
    assert rc == 2


def test_output_root_from_environment(cfg_path, tmp_path, monkeypatch):
    root = tmp_path / "envroot"
    monkeypatch.setenv("SLABHYBRID_OUT", str(root))
    rc = main(["dump-closures", "--config", str(cfg_path), "--histories", "200"])
    assert rc == 0
    assert _rundirs(root)
