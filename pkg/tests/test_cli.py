import pytest

from src.cone_cli import build_parser, main, run
from utils.experiment_config import ExperimentConfig, load_config
from utils.reporting import read_csv


def manifest_lines(out_dir):
    return (out_dir / "MANIFEST").read_text().splitlines()


def test_parser_defaults():
    args = build_parser().parse_args(["zeta", "--seed", "4"])
    assert args.subcommand == "zeta"
    assert args.config == "laplace_type.csv"
    assert args.seed == 4
    assert args.tolerance_profile is None
    with pytest.raises(SystemExit):
        build_parser().parse_args(["wave"])


def test_index_run_writes_manifest(tmp_path):
    code = run("index", load_config("laplace_type.csv"), tmp_path)
    assert code in (0, 3)
    lines = manifest_lines(tmp_path)
    assert lines[1] == "complete: true"
    written = {line.split()[-1] for line in lines[2:]}
    assert {"mckean_singer.csv", "index_report.csv", "red_to_const.csv", "red_to_sobolev.csv"} <= written

    report = read_csv(tmp_path / "index_report.csv")
    assert report["index"].iloc[0] == pytest.approx(-1.0, abs=1e-6)
    assert (tmp_path / "index_report.csv").read_text().startswith("# config-digest: ")


def test_runner_error_marks_manifest_incomplete(tmp_path):
    # an oracle spectrum cut at 100 cannot bound the heat-trace tail at t = 1e-3
    code = run("heat", ExperimentConfig(lambda_cut=100.0), tmp_path)
    assert code == 2
    lines = manifest_lines(tmp_path)
    assert "complete: false" in lines
    assert any(line.startswith("error: ValidationError") for line in lines)
    assert any(line.startswith("payload.required_count") for line in lines)


def test_main_rejects_missing_config(tmp_path):
    assert main(["heat", "--config", "missing.csv", "--out", str(tmp_path)]) == 2


def test_main_writes_under_data_dir_by_default(tmp_path, monkeypatch):
    monkeypatch.setattr("src.cone_cli.DATA_DIR", tmp_path)
    main(["index"])
    assert (tmp_path / "index" / "MANIFEST").exists()


@pytest.mark.slow
def test_verify_run(tmp_path):
    assert run("verify", load_config("laplace_type.csv"), tmp_path) == 0
    summary = read_csv(tmp_path / "verify_summary.csv")
    assert (summary["verdict"] == "PASS").all()


@pytest.mark.slow
def test_heat_run_judges_expansion(tmp_path):
    assert run("heat", load_config("laplace_type.csv"), tmp_path) == 0
    checks = read_csv(tmp_path / "heat_checks.csv")
    assert list(checks["check"]) == ["leading_exponent", "excluded_log_terms", "window_stability"]
    assert (checks["verdict"] == "PASS").all()


@pytest.mark.slow
def test_zeta_run_judges_continuation(tmp_path):
    assert run("zeta", load_config("laplace_type.csv"), tmp_path) == 0
    checks = read_csv(tmp_path / "zeta_checks.csv").set_index("check")
    assert {"pole_location", "leading_residue", "direct_power_sum"} <= set(checks.index)
    assert checks.loc["direct_power_sum", "value"] <= 1e-6


@pytest.mark.slow
def test_weighted_resolvent_run_detects_family(tmp_path):
    assert run("resolvent", load_config("weighted_tip.csv"), tmp_path) == 0
    family = read_csv(tmp_path / "resolvent_weight_family.csv")
    assert family["weight_family"].iloc[0] == pytest.approx(-1.5)
