import pytest
import yaml

from conftest import FAST
from gdtsim import harness as hx
from gdtsim.cli import build_parser, main


@pytest.fixture
def cfg_file(tmp_path):
    data = dict(FAST, n_users=6, n_slots=12)
    path = tmp_path / "small.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


def test_parser_flags():
    args = build_parser().parse_args(["run", "--seed", "3", "--scheme", "drl", "--out", "x"])
    assert args.seed == 3 and args.scheme == "drl" and str(args.out) == "x"


def test_parser_rejects_unknown_scheme():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["run", "--scheme", "random"])


def test_run_writes_outputs(cfg_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--config", str(cfg_file), "--scheme", "heuristic", "--seed", "2",
                 "--out", str(out)]) == 0
    assert "mean_qoe" in capsys.readouterr().out
    for name in ("slots.csv", "loop_telemetry.csv", "arbitration.csv", "manifest.json"):
        assert (out / name).exists()


def test_sweep_single_seed(cfg_file, tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", str(cfg_file), "--scheme", "drl", "--seed", "0",
                 "--capacities", "1000", "4000", "--out", str(out)]) == 0
    assert len(hx.read_csv(out / "qoe_vs_compute.csv")) == 2


def test_curves(cfg_file, tmp_path):
    out = tmp_path / "curves"
    assert main(["curves", "--config", str(cfg_file), "--planted", "--scheme", "heuristic",
                 "--out", str(out)]) == 0
    assert (out / "swipe_curves.csv").exists()


def test_bad_config_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("n_users: 0\n")
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "n_users" in capsys.readouterr().err
