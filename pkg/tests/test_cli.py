import json
import re
import subprocess
import sys

import pytest

from cdrsynth.cli import main
from cdrsynth.core import load_config, read_cdr_csv

SMALL_CFG = """\
n_users = 80
duration_s = 86400
world_width = 2500
world_height = 2500
n_home_neighborhoods = 6
n_office_neighborhoods = 3
n_leisure_spots = 3
n_bus_lines = 2
n_stations = 30
boot_n_users = 60
max_epochs = 1
hidden_event = 12
hidden_iet = 12
hidden_corr = 12
"""

CHAIN = ["bootstrap-ref", "simulate-mobility", "build-topology", "map-cells", "build-social",
         "train", "generate"]


def _run(tmp, *args):
    return main([*args, "--config", str(tmp / "small.cfg"), "--out", str(tmp / "out"),
                 "--stage-dir", str(tmp / "stages")])


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    (tmp / "small.cfg").write_text(SMALL_CFG)
    for cmd in CHAIN:
        assert _run(tmp, cmd) == 0, cmd
    return tmp


def test_chain_publishes_outputs(pipeline_dir):
    out = pipeline_dir / "out"
    for name in ("cdr_244-91.csv", "cdr_244-05.csv", "generation_log.json", "identities.csv",
                 "phonebooks.csv", "cells.geojson", "stations.csv", "ref_stats.json"):
        assert (out / name).exists(), name
    recs = read_cdr_csv(out / "cdr_244-91.csv")
    assert recs and all(r.phone.startswith("24491") for r in recs)
    for r in recs:
        r.validate(horizon=86400)
    log = json.loads((out / "generation_log.json").read_text())
    assert log["records"] == sum(len(read_cdr_csv(out / f)) for f in
                                 ("cdr_244-91.csv", "cdr_244-05.csv"))


def test_manifest_records_config_hash(pipeline_dir):
    cfg = load_config(pipeline_dir / "small.cfg")
    man = json.loads((pipeline_dir / "stages" / "cdrs" / "manifest.json").read_text())
    assert man["config_hash"] == cfg.hash() and man["seed"] == cfg.seed


def test_rerun_is_up_to_date(pipeline_dir, capsys):
    assert _run(pipeline_dir, "generate") == 0
    assert "up to date" in capsys.readouterr().out


def test_forced_rerun_is_byte_identical(pipeline_dir):
    path = pipeline_dir / "out" / "cdr_244-05.csv"
    before = path.read_bytes()
    assert _run(pipeline_dir, "generate", "--force") == 0
    assert path.read_bytes() == before


def test_evaluate_and_analyze(pipeline_dir):
    assert _run(pipeline_dir, "evaluate") == 0
    assert _run(pipeline_dir, "analyze") == 0
    out = pipeline_dir / "out"
    assert (out / "evaluation_event.csv").read_text().startswith("model,predictor")
    assert (out / "metrics").is_dir() and any((out / "metrics").iterdir())


def test_missing_upstream_stage_names_producer(tmp_path, capsys):
    (tmp_path / "small.cfg").write_text(SMALL_CFG)
    assert _run(tmp_path, "generate") == 1
    err = capsys.readouterr().err
    assert re.search(r"missing stage '\w+' .*; run `[a-z-]+` first", err)


def test_bad_config_exits_with_one(tmp_path, capsys):
    (tmp_path / "small.cfg").write_text("n_users = many\n")
    assert _run(tmp_path, "simulate-mobility") == 1
    assert "n_users" in capsys.readouterr().err
    assert main(["simulate-mobility", "--config", str(tmp_path / "absent.cfg")]) == 1


def test_module_entry_point_help():
    r = subprocess.run([sys.executable, "-m", "cdrsynth", "--help"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and "generate" in r.stdout
