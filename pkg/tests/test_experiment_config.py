import pytest

from utils.errors import ConfigurationError
from utils.experiment_config import ExperimentConfig, TOLERANCE_PROFILES, load_config


def write_config(tmp_path, rows):
    path = tmp_path / "case.csv"
    path.write_text("key,value\n" + "".join(f"{k},{v}\n" for k, v in rows))
    return path


def test_load_shipped_configs():
    cfg = load_config("laplace_type.csv")
    assert cfg.name == "laplace_type"
    assert cfg.npoints == 2000 and isinstance(cfg.npoints, int)
    assert cfg.z_grid == [-3.0, -2.5, -1.7, -0.8]
    assert cfg.perturbation == []
    assert cfg.tolerances["oracle_rel_tol"] == 1e-4

    perturbed = load_config("perturbed_model.csv")
    assert perturbed.perturbation == [0.5]
    assert perturbed.N == 3
    assert perturbed.t_grid()[0] == pytest.approx(0.05)


def test_overrides_replace_file_values():
    cfg = load_config("laplace_type.csv", seed=5, profile="strict", N=None)
    assert cfg.seed == 5
    assert cfg.N == 2
    assert cfg.tolerances == TOLERANCE_PROFILES["strict"]


def test_unknown_key(tmp_path):
    with pytest.raises(ConfigurationError) as info:
        load_config(write_config(tmp_path, [("mu", "2"), ("colour", "red")]))
    assert info.value.payload["key"] == "colour"


def test_value_that_does_not_parse(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(write_config(tmp_path, [("mu", "two")]))


def test_missing_file():
    with pytest.raises(ConfigurationError):
        load_config("no_such_config.csv")


@pytest.mark.parametrize("overrides", [
    {"t_min": 0.5},
    {"N": 1},
    {"zeta_t0": 0.5},
    {"sector": [1.0]},
    {"eps_list": [0.1, -0.2]},
    {"profile": "lenient"},
])
def test_validation_errors(overrides):
    with pytest.raises(ConfigurationError):
        ExperimentConfig(**overrides).validate()


def test_digest_tracks_values():
    first, second = load_config("laplace_type.csv"), load_config("laplace_type.csv")
    assert first.digest() == second.digest()
    assert load_config("laplace_type.csv", seed=1).digest() != first.digest()


def test_lambda_grid_on_sector_bisector():
    cfg = ExperimentConfig()
    lam = cfg.lam_grid()
    assert abs(lam[0]) == pytest.approx(10.0)
    assert lam[0].real == pytest.approx(-10.0)
