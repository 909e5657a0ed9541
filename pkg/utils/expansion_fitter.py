from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from scipy.optimize import minimize_scalar

from utils.errors import NumericalError, ValidationError

DETECTION_RATIO = 10.0
MAX_CONDITIONING = 1e12
NOISE_FLOOR = 1e-10
MIN_SAMPLES_PER_TERM = 4
TERM_MATCH_TOL = 1e-9


@dataclass
class LogPolyExpansion:
    """sum c_{gamma, j} p^gamma (log p)^j fitted on a window of the parameter p."""
    terms: list
    fit_window: tuple
    residual: float
    conditioning: float
    detected: dict = field(default_factory=dict)
    detected_exponents: dict = field(default_factory=dict)
    leading_exponent: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.terms = sorted(self.terms, key=lambda term: (term[0], term[1]))
        keys = [(round(gamma, 9), j) for gamma, j, _ in self.terms]
        if len(set(keys)) != len(keys):
            raise ValidationError("duplicate (gamma, j) in expansion", terms=keys)

    def __len__(self):
        return len(self.terms)

    def coefficient(self, gamma: float, j: int = 0) -> complex:
        for g, k, c in self.terms:
            if abs(g - gamma) < TERM_MATCH_TOL and k == j:
                return c
        return 0.0

    def is_detected(self, gamma: float, j: int = 0) -> bool:
        for (g, k), flag in self.detected.items():
            if abs(g - gamma) < TERM_MATCH_TOL and k == j:
                return flag
        return False

    def exponent_detected(self, gamma: float) -> bool:
        """Whether dropping every column at gamma together is visible in the residual."""
        for g, flag in self.detected_exponents.items():
            if abs(g - gamma) < TERM_MATCH_TOL:
                return flag
        return False

    def detected_terms(self) -> list:
        return [(g, j) for (g, j), flag in sorted(self.detected.items()) if flag]

    def evaluate(self, param) -> np.ndarray:
        param = np.asarray(param, dtype=float)
        total = np.zeros(param.shape, dtype=complex)
        for gamma, j, c in self.terms:
            total = total + c * param ** gamma * np.log(param) ** j
        return total

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for gamma, j, c in self.terms:
            c = complex(c)
            rows.append({"gamma": gamma, "logpow": j, "coeff_re": c.real, "coeff_im": c.imag,
                         "detected": bool(self.detected.get((gamma, j), False))})
        return pd.DataFrame(rows, columns=["gamma", "logpow", "coeff_re", "coeff_im", "detected"])


class ExpansionFitter:
    def __init__(self, param, values, terms, noise_floor=NOISE_FLOOR, detection_ratio=DETECTION_RATIO,
                 free_leading=False, leading_range=0.5, limit="zero"):
        """
        Initialize the fitter with sampled data.

        Parameters:
        - param: np.ndarray -> sample locations (t, |lambda|, x or z), all positive
        - values: np.ndarray -> sampled values, complex allowed
        - terms: List[(float, int)] -> design columns param^gamma (log param)^j
        - noise_floor: float -> relative residual treated as zero when deciding detection
        - detection_ratio: float -> a term is detected iff dropping it raises the residual this much
        - free_leading: bool -> fit the dominant exponent instead of fixing it
        - leading_range: float -> search half-width around the given leading exponent
        - limit: str -> "zero" (param -> 0, smallest exponent dominates) or "infinity" (largest dominates)
        """
        self.param = np.asarray(param, dtype=float)
        self.values = np.asarray(values, dtype=complex)
        self.terms = [(float(gamma), int(j)) for gamma, j in terms]
        self.noise_floor = noise_floor
        self.detection_ratio = detection_ratio
        self.free_leading = free_leading
        self.leading_range = leading_range
        if limit not in ("zero", "infinity"):
            raise ValidationError("limit must be zero or infinity", limit=limit)
        self.limit = limit
        self.model = None

    def build(self):
        if len(self.param) != len(self.values):
            raise ValidationError("parameter and value arrays differ in length",
                                  params=len(self.param), values=len(self.values))
        if np.any(self.param <= 0):
            raise ValidationError("fit parameter must be positive")
        if len(set(self.terms)) != len(self.terms):
            raise ValidationError("duplicate design columns", terms=self.terms)

        magnitude = np.abs(self.values)
        empty = bool(np.all(magnitude == 0))
        if not empty:
            if np.any(magnitude == 0):
                raise ValidationError("relative weighting needs nonzero samples")
            if len(self.param) < MIN_SAMPLES_PER_TERM * max(len(self.terms), 1):
                raise ValidationError("too few samples for the requested terms",
                                      samples=len(self.param), terms=len(self.terms),
                                      required=MIN_SAMPLES_PER_TERM * len(self.terms))

        # Relative weighting: every row is divided by the sample magnitude
        self.model = {
            "empty": empty,
            "log_param": np.log(self.param),
            "row_scale": np.where(magnitude > 0, 1.0 / np.where(magnitude > 0, magnitude, 1.0), 0.0),
        }
        self.model["target"] = self.values * self.model["row_scale"]

    def _columns(self, terms):
        log_param = self.model["log_param"]
        return np.column_stack([
            np.exp(gamma * log_param) * log_param ** j * self.model["row_scale"] for gamma, j in terms
        ]) if terms else np.zeros((len(log_param), 0))

    def _least_squares(self, terms):
        target = self.model["target"]
        if not terms:
            residual = float(np.sqrt(np.mean(np.abs(target) ** 2)))
            return np.zeros(0, dtype=complex), residual, 1.0
        design = self._columns(terms)
        norms = np.linalg.norm(design, axis=0)
        norms = np.where(norms > 0, norms, 1.0)
        scaled = design / norms
        solution, *_ = np.linalg.lstsq(scaled, target, rcond=None)
        residual = float(np.sqrt(np.mean(np.abs(target - scaled @ solution) ** 2)))
        singular = np.linalg.svd(scaled, compute_uv=False)
        conditioning = float(singular[0] / singular[-1]) if singular[-1] > 0 else np.inf
        return solution / norms, residual, conditioning

    def _leading(self, terms):
        exponents = [gamma for gamma, _ in terms]
        return min(exponents) if self.limit == "zero" else max(exponents)

    def _with_leading(self, gamma0):
        lead = self._leading(self.terms)
        return [(gamma0 if abs(gamma - lead) < TERM_MATCH_TOL else gamma, j) for gamma, j in self.terms]

    def solve(self):
        if self.model is None:
            raise RuntimeError("Model not built. Call `.build()` first.")
        if self.model["empty"]:
            self.results = {"terms": [], "coefficients": np.zeros(0), "residual": 0.0,
                            "conditioning": 1.0, "detected": {}, "detected_exponents": {}, "leading": None}
            return

        terms = list(self.terms)
        leading = None
        if self.free_leading and terms:
            lead = self._leading(terms)
            search = minimize_scalar(lambda g: self._least_squares(self._with_leading(g))[1],
                                     bounds=(lead - self.leading_range, lead + self.leading_range),
                                     method="bounded", options={"xatol": 1e-10})
            leading = float(search.x)
            terms = self._with_leading(leading)

        coefficients, residual, conditioning = self._least_squares(terms)
        if conditioning > MAX_CONDITIONING:
            raise NumericalError("design matrix is ill-conditioned; shrink the term list or the window",
                                 conditioning=conditioning, terms=len(terms))

        detected = {}
        for i, term in enumerate(terms):
            _, reduced, _ = self._least_squares(terms[:i] + terms[i + 1:])
            ratio = (reduced + self.noise_floor) / (residual + self.noise_floor)
            detected[term] = bool(ratio >= self.detection_ratio)

        detected_exponents = {}
        for gamma in sorted({g for g, _ in terms}):
            _, reduced, _ = self._least_squares([term for term in terms if abs(term[0] - gamma) >= TERM_MATCH_TOL])
            ratio = (reduced + self.noise_floor) / (residual + self.noise_floor)
            detected_exponents[gamma] = bool(ratio >= self.detection_ratio)

        self.results = {"terms": terms, "coefficients": coefficients, "residual": residual,
                        "conditioning": conditioning, "detected": detected, "detected_exponents": detected_exponents,
                        "leading": leading}

    def get_solu(self) -> LogPolyExpansion:
        if self.model is None:
            raise RuntimeError("No model available.")
        results = self.results
        coefficients = [complex(c) for c in results["coefficients"]]
        if np.all(np.abs(self.values.imag) == 0):
            coefficients = [c.real for c in coefficients]
        window = (float(self.param.min()), float(self.param.max())) if len(self.param) else (np.nan, np.nan)
        return LogPolyExpansion(
            terms=[(gamma, j, c) for (gamma, j), c in zip(results["terms"], coefficients)],
            fit_window=window,
            residual=results["residual"],
            conditioning=results["conditioning"],
            detected=results["detected"],
            detected_exponents=results["detected_exponents"],
            leading_exponent=results["leading"],
        )
