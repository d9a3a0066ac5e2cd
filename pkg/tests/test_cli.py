import json
import subprocess
import sys
from pathlib import Path

import pytest

from evcoord.cli import main
from evcoord.sessions import dump_episodes, load_episodes

from conftest import make_episode

SMOKE = Path(__file__).resolve().parents[1] / "configs" / "smoke.json"


@pytest.fixture
def three_evs_file(tmp_path):
    path = tmp_path / "three_evs.jsonl"
    dump_episodes([make_episode([(3, 2), (2, 1), (2, 2)], s_max=12, n_max=10)], path)
    return path


def test_no_arguments_is_usage_error(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "evcoord"], capture_output=True, text=True)
    assert proc.returncode == 2
    assert proc.stderr.startswith("usage")


def test_oracle_three_evs(three_evs_file, tmp_path, capsys):
    assert main(["oracle", "--episodes", str(three_evs_file), "--out", str(tmp_path / "p.jsonl")]) == 0
    assert capsys.readouterr().out.strip() == "episode 0 L_opt = 9"
    rec = json.loads((tmp_path / "p.jsonl").read_text())
    assert sum(rec["power"]) == 5


def test_baseline_three_evs(three_evs_file, capsys):
    assert main(["baseline", "--episodes", str(three_evs_file)]) == 0
    header, row = capsys.readouterr().out.strip().splitlines()
    assert header.startswith("episode_id,L_opt,L_bau")
    assert row.split(",")[:3] == ["0", "9", "13"]


def test_missing_episodes_file(tmp_path, capsys):
    assert main(["oracle", "--episodes", str(tmp_path / "nope.jsonl")]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert err[-1].startswith("error: missing-file:")


def test_bad_config(tmp_path, three_evs_file, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"no_such_key": 1}))
    assert main(["oracle", "--config", str(cfg), "--episodes", str(three_evs_file)]) == 1
    assert "invalid-config" in capsys.readouterr().err


def test_unknown_flag():
    with pytest.raises(SystemExit) as info:
        main(["oracle", "--frobnicate"])
    assert info.value.code == 2


def test_generate_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["generate", "--seed", "3", "--n-episodes", "12",
                     "--out", str(tmp_path / f"{name}.jsonl")]) == 0
    a, b = (tmp_path / "a.jsonl").read_bytes(), (tmp_path / "b.jsonl").read_bytes()
    assert a == b
    assert len(load_episodes(tmp_path / "a.jsonl")) == 12


def test_validate_ok(tmp_path, capsys):
    path = tmp_path / "eps.jsonl"
    main(["generate", "--n-episodes", "15", "--out", str(path)])
    capsys.readouterr()
    assert main(["validate", "--episodes", str(path)]) == 0
    assert capsys.readouterr().out.startswith("ok: 15 episodes")


def test_ingest_round_trip(tmp_path):
    csv = tmp_path / "tx.csv"
    csv.write_text(
        "station_id,arrival,departure,energy_kwh\n"
        "A,2021-03-01 07:30:00,2021-03-01 13:00:00,20\n"
        "B,2021-03-01 09:00:00,2021-03-01 11:00:00,5\n"
    )
    out = tmp_path / "eps.jsonl"
    assert main(["ingest", str(csv), "--out", str(out)]) == 0
    (ep,) = load_episodes(out)
    assert len(ep.sessions) == 2


def test_experiment_obs_layout(tmp_path, capsys):
    rc = main(["experiment", "obs", "--config", str(SMOKE), "--iterations", "1",
               "--trajectories", "3", "--jobs", "1", "--out", str(tmp_path)])
    assert rc == 0
    assert "RL_vl: median normalized load" in capsys.readouterr().out
    root = tmp_path / "obs"
    (split,) = [p for p in root.iterdir() if p.is_dir()]
    assert {"BAU.csv", "Heur.csv", "RL_ml.csv", "RL_vl.csv", "RL_mg.csv", "RL_vg.csv"} <= \
        {p.name for p in split.iterdir()}
    manifest = json.loads((root / "manifest.json").read_text())
    assert manifest["run"]["fqi"]["iterations"] == 1
