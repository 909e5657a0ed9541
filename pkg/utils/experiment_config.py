import hashlib
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from paths import CONFIG_DIR
from utils.errors import ConfigurationError

logger = logging.getLogger(__name__)

TOLERANCE_PROFILES = {
    "default": {"detection_ratio": 10.0, "identity_tol": 1e-6, "integer_tol": 1e-6, "oracle_rel_tol": 1e-4},
    "strict": {"detection_ratio": 100.0, "identity_tol": 1e-8, "integer_tol": 1e-8, "oracle_rel_tol": 5e-5},
}


@dataclass
class ExperimentConfig:
    """Flat key/value experiment description; list values are space separated."""
    name: str = "experiment"
    # operator
    mu: float = 2.0
    n: int = 2
    a: float = 1.5
    alpha: float = 1.0
    mode_cap: int = 8
    perturbation: list = field(default_factory=list)
    sector: list = field(default_factory=lambda: [np.pi / 2, 3 * np.pi / 2])
    # discretization
    s_min: float = -12.0
    s_max: float = 0.0
    npoints: int = 2000
    eigen_count: int = 10
    lambda_cut: float = 4e4
    # traces and fits
    t_min: float = 1e-3
    t_max: float = 1e-1
    t_samples: int = 60
    lam_min: float = 10.0
    lam_max: float = 100.0
    lam_samples: int = 40
    lam_decay_min: float = 1e2
    lam_decay_max: float = 1e6
    N: int = 2
    beta: float = 0.0
    mu_prime: float = 0.0
    k_max: int = 3
    max_log: int = 1
    # zeta
    zeta_t0: float = 0.01
    z_grid: list = field(default_factory=lambda: [-3.0, -2.5, -1.7, -0.8])
    # index
    tau_count: int = 7
    eps: float = 0.1
    eps_list: list = field(default_factory=lambda: [0.0, 0.2, 0.4])
    # runner
    seed: int = 0
    cases: int = 20
    profile: str = "default"

    @property
    def tolerances(self) -> dict:
        return TOLERANCE_PROFILES[self.profile]

    def digest(self) -> str:
        text = "\n".join(f"{f.name}={getattr(self, f.name)!r}" for f in fields(self))
        return hashlib.sha256(text.encode()).hexdigest()

    def t_grid(self) -> np.ndarray:
        return np.geomspace(self.t_min, self.t_max, self.t_samples)

    def lam_grid(self) -> np.ndarray:
        arg = 0.5 * (self.sector[0] + self.sector[1])
        return np.geomspace(self.lam_min, self.lam_max, self.lam_samples) * np.exp(1j * arg)

    def validate(self):
        checks = [
            (self.mu > 0, "mu must be positive", {"mu": self.mu}),
            (self.n >= 1, "n must be at least 1", {"n": self.n}),
            (self.a >= 0, "a must be nonnegative", {"a": self.a}),
            (self.mode_cap >= 0, "mode_cap must be nonnegative", {"mode_cap": self.mode_cap}),
            (self.s_min < -5, "s_min must lie below -5", {"s_min": self.s_min}),
            (self.s_max > self.s_min, "s_max must exceed s_min", {"s_max": self.s_max}),
            (self.npoints >= 100, "npoints must be at least 100", {"npoints": self.npoints}),
            (self.eigen_count >= 1, "eigen_count must be positive", {"eigen_count": self.eigen_count}),
            (self.lambda_cut > 0, "lambda_cut must be positive", {"lambda_cut": self.lambda_cut}),
            (0 < self.t_min < self.t_max, "need 0 < t_min < t_max", {"t_min": self.t_min, "t_max": self.t_max}),
            (1 <= self.lam_min < self.lam_max, "need 1 <= lam_min < lam_max",
             {"lam_min": self.lam_min, "lam_max": self.lam_max}),
            (1 <= self.lam_decay_min < self.lam_decay_max, "need 1 <= lam_decay_min < lam_decay_max",
             {"lam_decay_min": self.lam_decay_min, "lam_decay_max": self.lam_decay_max}),
            (self.N * self.mu - self.mu_prime > self.n, "trace class needs N mu - mu' > n",
             {"N": self.N, "mu": self.mu, "mu_prime": self.mu_prime}),
            (self.k_max >= 0, "k_max must be nonnegative", {"k_max": self.k_max}),
            (self.t_min < self.zeta_t0 <= self.t_max, "zeta_t0 must lie inside the heat window",
             {"zeta_t0": self.zeta_t0}),
            (len(self.sector) == 2 and self.sector[0] < self.sector[1], "sector needs arg_min < arg_max",
             {"sector": self.sector}),
            (all(e >= 0 for e in self.eps_list), "eps_list must be nonnegative", {"eps_list": self.eps_list}),
            (self.profile in TOLERANCE_PROFILES, "unknown tolerance profile", {"profile": self.profile}),
        ]
        for ok, message, payload in checks:
            if not ok:
                raise ConfigurationError(message, **payload)
        return self


def _convert(kind, raw: str):
    raw = str(raw).strip()
    if kind is list:
        return [float(token) for token in raw.split()] if raw and raw.lower() != "none" else []
    if kind is int:
        return int(float(raw))
    if kind is float:
        return float(raw)
    return raw


def load_config(path, **overrides) -> ExperimentConfig:
    """Read a key,value CSV (comments start with #) into a validated ExperimentConfig."""
    path = Path(path)
    if not path.is_absolute() and not path.exists():
        path = CONFIG_DIR / path
    if not path.exists():
        raise ConfigurationError("config file not found", path=str(path))

    table = pd.read_csv(path, comment="#", dtype=str, skipinitialspace=True).fillna("")
    if list(table.columns) != ["key", "value"]:
        raise ConfigurationError("config needs exactly the columns key,value", columns=list(table.columns))

    types = {f.name: f.type for f in fields(ExperimentConfig)}
    values = {}
    for key, raw in zip(table["key"].str.strip(), table["value"]):
        if key not in types:
            raise ConfigurationError("unknown config key", key=key, path=str(path))
        try:
            values[key] = _convert(types[key], raw)
        except ValueError as exc:
            raise ConfigurationError("config value does not parse", key=key, value=raw) from exc

    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = ExperimentConfig(**values).validate()
    logger.info("loaded config %s from %s (digest %s)", cfg.name, path, cfg.digest()[:12])
    return cfg
