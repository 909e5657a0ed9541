import logging
import warnings
from dataclasses import dataclass, field
from math import comb, factorial
from typing import Callable, Optional

import numpy as np
import pandas as pd
from scipy.integrate import IntegrationWarning, quad
from scipy.special import gamma as gamma_function
from scipy.special import rgamma

from utils.errors import ConfigurationError, NumericalError, PoleError, ValidationError, Verdict
from utils.expansion_fitter import NOISE_FLOOR, ExpansionFitter, LogPolyExpansion
from utils.indexsets import IndexSet, extended_union
from utils.symbols import HomogComponent, excision, excision_derivative
from utils.traces import HEAT_CUTOFF, SpectralData, TraceSeries, tip_cutoff

logger = logging.getLogger(__name__)

LATTICE_TOL = 1e-9
QUAD_EPSREL = 1e-12
QUAD_LIMIT = 400

PUSHFORWARD_WINDOW = (1e-6, 1e-2)
PUSHFORWARD_SAMPLES = 48
EXPONENT_MARGIN = 0.5

COMPONENT_Z_GRID = (1e-3, 1e-1)
COMPONENT_SAMPLES = 40
COMPONENT_TERM_SPAN = 5.0
IDENTITY_STEP = 1e-2
IDENTITY_TOL = 1e-6

ZETA_SPLIT = 0.1
CANCELLED_POLE_OFFSET = 1e-6
RESIDUE_RADIUS = 1e-3
RESIDUE_POINTS = 64
LAURENT_STEP = 1e-4

LEADING_TOL = 0.02
STABILITY_TOL = 0.02
POLE_TOL = 0.05
RESIDUE_REL_TOL = 0.05
ZETA_DIRECT_TOL = 1e-6


def _in_shifted_naturals(value: float, shift: float, step: float = 1.0) -> bool:
    """value in step * N_0 + shift."""
    q = (value - shift) / step
    return q > -LATTICE_TOL and abs(q - round(q)) < LATTICE_TOL


def _meta_value(meta: dict, key: str, default=None):
    if key in meta:
        return float(meta[key])
    if default is None:
        raise ConfigurationError("expansion metadata is missing a field", field=key)
    return default


def predict_terms(meta: dict, kind: str, k_max: int) -> list:
    """
    Exponents and maximal log powers allowed in a heat or resolvent trace expansion.

    Heat (powers of t):
        t^{(k - mu' - n)/mu} (log t)^{0,1,2},  t^{(k - beta)/mu} (log t)^{0,1},  t^k
    Resolvent (powers of |lambda|):
        lambda^{(mu' + n - k)/mu - N} (log)^{0,1,2},  lambda^{(beta - k)/mu - N} (log)^{0,1},  lambda^{-k - N}
    A log term survives only on its lattice:
        log^1 of the first family: k in (N_0 + mu' + n - beta) u (mu N_0 + mu' + n)
        log^2 of the first family: k - mu' - n in mu N_0 and in N_0 - beta
        log^1 of the second family: k in mu N_0 + beta
    Every family is truncated at the exponent reached by the first family at
    k = k_max; colliding exponents keep the largest log power.

    Returns:
        list of (gamma, max log power) sorted by gamma (descending for resolvents)
    """
    if kind not in ("heat", "resolvent"):
        raise ConfigurationError("expansion kind must be heat or resolvent", kind=kind)
    if k_max < 0:
        raise ConfigurationError("k_max must be nonnegative", k_max=k_max)
    mu = _meta_value(meta, "mu")
    n = _meta_value(meta, "n")
    mu_prime = _meta_value(meta, "mu_prime", 0.0)
    beta = _meta_value(meta, "beta", 0.0)
    N = _meta_value(meta, "N", 0.0) if kind == "resolvent" else 0.0
    if mu <= 0:
        raise ConfigurationError("weight order must be positive", mu=mu)

    # work in heat orientation gamma(k); resolvents map gamma -> -gamma - N
    bound = (k_max - mu_prime - n) / mu
    merged = {}

    def add(gamma, logs):
        if gamma <= bound + LATTICE_TOL:
            key = round(gamma, 9)
            merged[key] = max(merged.get(key, 0), logs)

    # the first family fixes the bound; the other two keep going until they pass it
    for k in range(k_max + 1):
        w = k - mu_prime - n
        logs = 0
        if _in_shifted_naturals(k, mu_prime + n - beta) or _in_shifted_naturals(k, mu_prime + n, mu):
            logs = 1
        if _in_shifted_naturals(w, 0.0, mu) and _in_shifted_naturals(w + beta, 0.0):
            logs = 2
        add(w / mu, logs)

    k = 0
    while (k - beta) / mu <= bound + LATTICE_TOL:
        add((k - beta) / mu, 1 if _in_shifted_naturals(k, beta, mu) else 0)
        k += 1

    k = 0
    while k <= bound + LATTICE_TOL:
        add(float(k), 0)
        k += 1

    terms = sorted(merged.items())
    if kind == "resolvent":
        return [(-gamma - N, logs) for gamma, logs in terms]
    return [(gamma, logs) for gamma, logs in terms]


def term_columns(predicted: list, max_log: Optional[int] = None) -> list:
    """Expand (gamma, max log power) into design columns (gamma, j), optionally capping j."""
    columns = []
    for gamma, logs in predicted:
        top = logs if max_log is None else min(logs, max_log)
        columns.extend((float(gamma), j) for j in range(top + 1))
    return sorted(columns)


def _noise_floor(series: TraceSeries) -> float:
    if len(series) == 0:
        return NOISE_FLOOR
    relative = np.asarray(series.tail_bound) / np.maximum(np.abs(series.values), 1e-300)
    return max(NOISE_FLOOR, 0.1 * float(np.median(relative)))


def fit_expansion(series: TraceSeries, terms: list, window: Optional[tuple] = None, free_leading: bool = False,
                  probes: tuple = (), noise_floor: Optional[float] = None) -> LogPolyExpansion:
    """
    Weighted least-squares fit of sum c p^gamma (log p)^j to a trace series.

    Parameters:
    - series: TraceSeries -> samples; heat in t, resolvent in |lambda|
    - terms: list -> design columns (gamma, j); (gamma, max log) pairs go through term_columns first
    - window: (lo, hi) -> restrict the samples to this parameter range
    - free_leading: bool -> fit the dominant exponent (smallest for heat, largest for resolvents)
    - probes: tuple -> extra (gamma, j) columns that should come back undetected
    - noise_floor: float -> relative residual level below which detection is not trusted
    """
    data = series.window(*window) if window is not None else series
    columns = sorted(set((float(g), int(j)) for g, j in list(terms) + list(probes)))
    floor = _noise_floor(data) if noise_floor is None else noise_floor

    limit = "infinity" if series.meta.get("kind") == "resolvent" else "zero"
    model = ExpansionFitter(data.param, data.values, columns, noise_floor=floor, free_leading=free_leading,
                            limit=limit)
    model.build()
    model.solve()
    expansion = model.get_solu()
    expansion.diagnostics.update({
        "kind": series.meta.get("kind", "series"),
        "samples": len(data),
        "noise_floor": floor,
        "probes": [(float(g), int(j)) for g, j in probes],
        "max_tail_ratio": float(np.max(data.tail_bound / np.maximum(np.abs(data.values), 1e-300)))
        if len(data) else 0.0,
    })
    logger.info("fit %s on [%.3g, %.3g]: %d columns, residual %.2e, conditioning %.2e",
                expansion.diagnostics["kind"], *expansion.fit_window, len(columns),
                expansion.residual, expansion.conditioning)
    return expansion


def weight_family_exponent(meta: dict, kind: str) -> Optional[float]:
    """Leading exponent of the family t^{(k - beta)/mu} (heat) or lambda^{(beta - k)/mu - N}; None when beta = 0."""
    beta = _meta_value(meta, "beta", 0.0)
    if beta == 0:
        return None
    gamma = -beta / _meta_value(meta, "mu")
    if kind == "resolvent":
        return -gamma - _meta_value(meta, "N")
    return gamma


def detect_weight_family(series: TraceSeries, max_log: Optional[int] = 1) -> tuple:
    """
    Fit at the lowest order where the weighted family enters the lattice and
    test its leading exponent with all of its log columns dropped together.

    Returns:
        (expansion, exponent, detected)
    """
    meta = series.meta
    kind = meta.get("kind")
    gamma = weight_family_exponent(meta, kind)
    if gamma is None:
        raise ConfigurationError("an unweighted trace has no weighted family", beta=meta.get("beta", 0.0))
    entry = _meta_value(meta, "mu_prime", 0.0) + _meta_value(meta, "n") - _meta_value(meta, "beta")
    k_max = max(0, int(np.ceil(entry - LATTICE_TOL)))
    expansion = fit_expansion(series, term_columns(predict_terms(meta, kind, k_max), max_log=max_log))
    detected = expansion.exponent_detected(gamma)
    expansion.diagnostics.update({"weight_family": gamma, "weight_family_detected": detected})
    logger.info("weighted family at exponent %.3g: %s", gamma, "detected" if detected else "not detected")
    return expansion, gamma, detected


def window_stability(series: TraceSeries, terms: list, windows: list, gamma: float, j: int = 0,
                     free_leading: bool = False) -> pd.DataFrame:
    """Coefficient of (gamma, j) refitted on each window, with its deviation from the windows' mean."""
    rows = []
    for lo, hi in windows:
        expansion = fit_expansion(series, terms, window=(lo, hi), free_leading=free_leading)
        lead = expansion.leading_exponent
        exponents = [g for g, _ in terms]
        dominant = max(exponents) if series.meta.get("kind") == "resolvent" else min(exponents)
        target = lead if (free_leading and abs(gamma - dominant) < LATTICE_TOL) else gamma
        rows.append({"window_lo": lo, "window_hi": hi, "coefficient": complex(expansion.coefficient(target, j)),
                     "residual": expansion.residual, "conditioning": expansion.conditioning,
                     "leading_exponent": lead})

    df = pd.DataFrame(rows)
    center = df["coefficient"].mean()
    df["relative_deviation"] = np.abs(df["coefficient"] - center) / max(abs(center), 1e-300)
    return df


def _check_row(check: str, value: float, threshold: float, ok: bool) -> dict:
    return {"check": check, "value": float(value), "threshold": float(threshold),
            "verdict": (Verdict.PASS if ok else Verdict.FAIL).value}


def heat_checks(series: TraceSeries, predicted: list, expansion: LogPolyExpansion, stability: pd.DataFrame,
                max_log: Optional[int] = 1) -> pd.DataFrame:
    """
    Verdict table for a heat-trace fit.

    `expansion` is the free-leading fit on the predicted columns and
    `stability` the window_stability table of the leading coefficient.
    Rows: leading exponent, log terms at singular exponents whose lattice
    forbids them (as extra log columns), window stability and, for beta > 0, the
    weighted family.
    """
    terms = term_columns(predicted, max_log=max_log)
    lead = min(gamma for gamma, _ in predicted)
    offset = abs(expansion.leading_exponent - lead)
    rows = [_check_row("leading_exponent", offset, LEADING_TOL, offset <= LEADING_TOL)]

    forbidden = [(gamma, 1) for gamma, logs in predicted if gamma < 0 and logs == 0]
    if forbidden:
        extra = [term for term in forbidden if fit_expansion(series, terms, probes=(term,)).is_detected(*term)]
        if extra:
            logger.info("log terms outside the lattice detected: %s", extra)
        rows.append(_check_row("excluded_log_terms", len(extra), 0, not extra))

    deviation = float(stability["relative_deviation"].max())
    rows.append(_check_row("window_stability", deviation, STABILITY_TOL, deviation <= STABILITY_TOL))

    if weight_family_exponent(series.meta, "heat") is not None:
        _, gamma, detected = detect_weight_family(series, max_log=max_log)
        rows.append(_check_row(f"weight_family_{gamma:g}", float(detected), 1.0, detected))
    return pd.DataFrame(rows, columns=["check", "value", "threshold", "verdict"])


# pushforward and ODE lemmas

def _quad(func: Callable, lo: float, hi: float, points=None, what: str = "integral") -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            if np.isinf(hi):
                value, error = quad(func, lo, hi, epsabs=0.0, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT)
            else:
                value, error = quad(func, lo, hi, epsabs=0.0, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT,
                                    points=points)
        except IntegrationWarning as exc:
            raise NumericalError(f"{what} failed to converge", lower=lo, upper=hi, reason=str(exc))
    if not np.isfinite(value):
        raise NumericalError(f"{what} is not finite", lower=lo, upper=hi)
    return value


def _exponent_terms(E: IndexSet, cutoff: float) -> tuple:
    """Design columns from an index set plus one log-probe per exponent."""
    terms, probes = [], []
    for z in E.exponents():
        if abs(z.imag) > LATTICE_TOL:
            raise ConfigurationError("fitting supports real exponents only", exponent=z)
        if z.real > cutoff + LATTICE_TOL:
            continue
        top = E.max_log_power(z)
        terms.extend((z.real, k) for k in range(top + 1))
        probes.append((z.real, top + 1))
    return terms, probes


def _lemma_verdict(expansion: LogPolyExpansion, terms: list, probes: list) -> Verdict:
    extra = [probe for probe in probes if expansion.is_detected(*probe)]
    absent = [term for term in terms if not expansion.is_detected(*term)]
    expansion.diagnostics.update({"unpredicted": extra, "absent": absent})
    if absent:
        logger.info("predicted but undetected terms: %s", absent)
    return Verdict.FAIL if extra else Verdict.PASS


def _lemma_fit(x_grid, values, terms, probes, what: str) -> LogPolyExpansion:
    if np.all(np.asarray(values) == 0):
        return LogPolyExpansion(terms=[], fit_window=(float(np.min(x_grid)), float(np.max(x_grid))),
                                residual=0.0, conditioning=1.0)
    model = ExpansionFitter(x_grid, values, sorted(set(terms + probes)))
    model.build()
    model.solve()
    expansion = model.get_solu()
    expansion.diagnostics["kind"] = what
    return expansion


@dataclass
class LemmaResult:
    expansion: LogPolyExpansion
    verdict: Verdict
    predicted: IndexSet
    samples: pd.DataFrame = field(default_factory=pd.DataFrame)


def pushforward_values(u: Callable, x_grid, breaks: tuple = (0.5, 0.9)) -> np.ndarray:
    """
    v(x) = int_x^1 u(x/y, y) dy/y, integrated in s = log y.

    `breaks` lists the points where u changes smoothness in either argument;
    they become quadrature breakpoints on both sides of the diagonal.
    """
    values = []
    for x in np.asarray(x_grid, dtype=float):
        lo = np.log(x)
        points = sorted({p for b in breaks for p in (np.log(b), lo - np.log(b)) if lo < p < 0})

        def integrand(s, x=x):
            y = np.exp(s)
            return float(np.real(u(x / y, y)))
        values.append(_quad(integrand, lo, 0.0, points=points or None, what="pushforward quadrature"))
    return np.asarray(values)


def pushforward_fund2(u: Callable, E_lb: IndexSet, E_rb: IndexSet, x_grid=None,
                      breaks: tuple = (0.5, 0.9)) -> LemmaResult:
    """
    Expansion of v(x) = int_0^1 u(x/y, y) dy/y against E_lb (ext) E_rb.

    The verdict is PASS when no log power beyond the predicted one is detected
    at any predicted exponent; predicted terms that the data do not show are
    listed in diagnostics["absent"].
    """
    if x_grid is None:
        x_grid = np.geomspace(*PUSHFORWARD_WINDOW, PUSHFORWARD_SAMPLES)
    x_grid = np.asarray(x_grid, dtype=float)
    if np.any((x_grid <= 0) | (x_grid >= 1)):
        raise ConfigurationError("pushforward samples must lie in (0, 1)")

    predicted = extended_union(E_lb, E_rb)
    leads = [E.leading() for E in (E_lb, E_rb) if E.leading() is not None]
    cutoff = max(z.real for z in leads) + EXPONENT_MARGIN if leads else 0.0
    terms, probes = _exponent_terms(predicted, cutoff)

    values = pushforward_values(u, x_grid, breaks)
    expansion = _lemma_fit(x_grid, values, terms, probes, "pushforward")
    verdict = _lemma_verdict(expansion, terms, probes) if len(expansion) else Verdict.PASS
    logger.info("pushforward: %d columns, verdict %s", len(terms) + len(probes), verdict.value)
    return LemmaResult(expansion=expansion, verdict=verdict, predicted=predicted,
                       samples=pd.DataFrame({"x": x_grid, "value": values}))


def cutoff_integral(s: float, inner: float = 0.5, outer: float = 0.9) -> float:
    """int_inner^1 (phi(y) - 1) y^{s-1} dy for the tip cutoff phi."""
    phi = tip_cutoff(inner, outer)
    return _quad(lambda y: (float(phi(y)) - 1.0) * y ** (s - 1.0), inner, 1.0, points=[outer],
                 what="cutoff moment")


def separable_pushforward(a: float, b: float, inner: float = 0.5, outer: float = 0.9):
    """
    u(x, y) = phi(x) phi(y) x^a y^b and the exact pushforward for x < inner:
        a != b:  v = (1/(b-a) + G(b-a)) x^a + (1/(a-b) + G(a-b)) x^b
        a == b:  v = -x^a log x + 2 G(0) x^a
    with G(s) = int_inner^1 (phi - 1) y^{s-1} dy.

    Returns:
        (u, E_lb, E_rb, dict (gamma, j) -> coefficient)
    """
    phi = tip_cutoff(inner, outer)

    def u(x, y):
        return phi(x) * phi(y) * x ** a * y ** b

    cutoff = max(a, b) + 2.0
    E_lb = IndexSet.from_pairs([(a, 0)], cutoff, cinf_step=True)
    E_rb = IndexSet.from_pairs([(b, 0)], cutoff, cinf_step=True)
    if abs(a - b) < LATTICE_TOL:
        exact = {(a, 1): -1.0, (a, 0): 2.0 * cutoff_integral(0.0, inner, outer)}
    else:
        exact = {(a, 0): 1.0 / (b - a) + cutoff_integral(b - a, inner, outer),
                 (b, 0): 1.0 / (a - b) + cutoff_integral(a - b, inner, outer)}
    return u, E_lb, E_rb, exact


def random_separable_cases(seed: int, count: int = 20, min_coincident: int = 3,
                           min_separation: float = 0.3) -> list:
    """Exponent pairs on the 0.1 grid in (0, 2); the first `min_coincident` pairs coincide."""
    if count < min_coincident:
        raise ConfigurationError("case count below the coincidence quota", count=count,
                                 min_coincident=min_coincident)
    rng = np.random.default_rng(seed)
    grid = np.round(np.arange(1, 20) * 0.1, 10)
    cases = []
    while len(cases) < count:
        a = float(rng.choice(grid))
        if len(cases) < min_coincident:
            cases.append((a, a))
            continue
        b = float(rng.choice(grid))
        if abs(a - b) >= min_separation - LATTICE_TOL:
            cases.append((a, b))
    return cases


def solve_fund1(g: Callable, a: float, x_grid, breaks: tuple = (0.5, 0.9)) -> np.ndarray:
    """f(x) = -x^a int_x^inf y^{-a} g(y) dy/y, the solution of (x d/dx - a) f = g decaying at infinity."""
    values = []
    for x in np.asarray(x_grid, dtype=float):
        head = 0.0
        if x < 1.0:
            points = [np.log(b) for b in breaks if x < b < 1.0]
            head = _quad(lambda s: float(np.real(np.exp(-a * s) * g(np.exp(s)))), np.log(x), 0.0,
                         points=points or None, what="ODE quadrature")
        tail = _quad(lambda y: float(np.real(y ** (-a - 1.0) * g(y))), max(x, 1.0), np.inf,
                     what="tail integral (divergent?)")
        values.append(-x ** a * (head + tail))
    return np.asarray(values)


def ode_fund1(g: Callable, E: IndexSet, a: float, x_grid=None) -> LemmaResult:
    """Expansion of the decaying solution of (x d/dx - a) f = g against E (ext) {(a, 0)}."""
    if x_grid is None:
        x_grid = np.geomspace(*PUSHFORWARD_WINDOW, PUSHFORWARD_SAMPLES)
    x_grid = np.asarray(x_grid, dtype=float)
    if np.iscomplexobj(a) and abs(np.imag(a)) > 0:
        raise ConfigurationError("fitting supports real exponents only", a=a)
    a = float(np.real(a))

    predicted = extended_union(E, IndexSet.from_pairs([(a, 0)], E.re_cutoff))
    lead = E.leading()
    cutoff = max(a, lead.real if lead is not None else a) + EXPONENT_MARGIN
    terms, probes = _exponent_terms(predicted, cutoff)

    values = solve_fund1(g, a, x_grid)
    expansion = _lemma_fit(x_grid, values, terms, probes, "fund1")
    verdict = _lemma_verdict(expansion, terms, probes) if len(expansion) else Verdict.PASS
    return LemmaResult(expansion=expansion, verdict=verdict, predicted=predicted,
                       samples=pd.DataFrame({"x": x_grid, "value": values}))


# trace component integrals

def _sphere_area(n: int) -> float:
    return 2.0 * np.pi ** (n / 2.0) / gamma_function(n / 2.0)


@dataclass
class ComponentResult:
    expansion: LogPolyExpansion
    gamma: float
    identity: pd.DataFrame
    verdict: Verdict


class ComponentIntegral:
    """
    A(z) = int chi(xi) a_k(xi, lambda(z)) dxi / (2 pi)^n, lambda(z) = -z^{-mu}.

    For n >= 2 the component is taken to be radial and is evaluated on the
    slice xi = (r, 0, ..., 0).
    """

    def __init__(self, component: HomogComponent, n: int, mu: float, radius: float):
        self.component = component
        self.n = n
        self.mu = mu
        self.radius = radius
        self.decay = -component.degree - n

    def _radial(self, r, lam):
        if self.n == 1:
            return complex(self.component(np.array(r), lam) + self.component(np.array(-r), lam))
        return _sphere_area(self.n) * complex(self.component(np.array(r), lam))

    def _integrate(self, func, lo, hi, points=None):
        re = _quad(lambda s: func(s).real, lo, hi, points=points, what="component quadrature")
        im = _quad(lambda s: func(s).imag, lo, hi, points=points, what="component quadrature")
        return complex(re, im)

    def __call__(self, z: float) -> complex:
        lam = -z ** (-self.mu)
        lo = np.log(0.5 * self.radius)
        scale = np.log(1.0 / z)
        hi = max(scale, np.log(self.radius)) + 32.0 / self.decay

        def integrand(s):
            r = np.exp(s)
            return r ** self.n * float(excision(r, self.radius)) * self._radial(r, lam)

        points = sorted(p for p in {np.log(self.radius), scale} if lo < p < hi)
        return self._integrate(integrand, lo, hi, points=points or None) / (2.0 * np.pi) ** self.n

    def cutoff_term(self, z: float) -> complex:
        """int (xi . grad chi)(xi) a_k(xi, lambda(z)) dxi / (2 pi)^n, supported on the excision shell."""
        lam = -z ** (-self.mu)
        lo, hi = np.log(0.5 * self.radius), np.log(self.radius)

        def integrand(s):
            r = np.exp(s)
            return r ** (self.n + 1) * float(excision_derivative(r, self.radius)) * self._radial(r, lam)
        return self._integrate(integrand, lo, hi) / (2.0 * np.pi) ** self.n

    def log_derivative(self, z: float, h: float = IDENTITY_STEP) -> complex:
        """z dA/dz by central differences in log z with one Richardson step."""
        def central(step):
            return (self(z * np.exp(step)) - self(z * np.exp(-step))) / (2.0 * step)
        return (4.0 * central(h / 2.0) - central(h)) / 3.0


def trace_component_Ak(component: HomogComponent, chi_radius: float, z_grid=None, mu: float = 2.0,
                       N: int = 2, mu_prime: float = 0.0, n: int = 1, k: int = 0) -> ComponentResult:
    """
    Fit A_k(z) against (mu N + mu N_0) (ext) {gamma}, gamma = N mu - mu' - n + k, and check
        (z d/dz - gamma) A_k(z) = -int (xi . grad chi) a_k(xi, lambda(z)) dxi / (2 pi)^n.
    """
    expected_degree = mu_prime - N * mu - k
    if abs(component.degree - expected_degree) > LATTICE_TOL:
        raise ConfigurationError("component degree does not match mu' - N mu - k",
                                 degree=component.degree, expected=expected_degree)
    if not component.degree < -n:
        raise ConfigurationError("component is not integrable at infinity", degree=component.degree, n=n)
    if chi_radius <= 0:
        raise ConfigurationError("excision radius must be positive", radius=chi_radius)
    if z_grid is None:
        z_grid = np.geomspace(*COMPONENT_Z_GRID, COMPONENT_SAMPLES)
    z_grid = np.asarray(z_grid, dtype=float)

    gamma = N * mu - mu_prime - n + k
    cutoff = gamma + COMPONENT_TERM_SPAN
    lattice = IndexSet.from_pairs([(mu * N + mu * i, 0) for i in range(int(cutoff / mu) + 2)], cutoff)
    predicted = extended_union(lattice, IndexSet.from_pairs([(gamma, 0)], cutoff))
    terms = [(z.real, j) for z, j in predicted.entries]

    integral = ComponentIntegral(component, n, mu, chi_radius)
    values = np.array([integral(z) for z in z_grid])
    model = ExpansionFitter(z_grid, values, terms)
    model.build()
    model.solve()
    expansion = model.get_solu()
    expansion.diagnostics["kind"] = "component"

    rows = []
    for z, value in zip(z_grid[::max(1, len(z_grid) // 8)], values[::max(1, len(z_grid) // 8)]):
        derivative = integral.log_derivative(z)
        lhs = derivative - gamma * value
        rhs = -integral.cutoff_term(z)
        scale = max(abs(derivative), abs(gamma * value), 1e-300)
        rows.append({"z": z, "lhs": lhs, "rhs": rhs, "relative_residual": abs(lhs - rhs) / scale})
    identity = pd.DataFrame(rows)
    worst = float(identity["relative_residual"].max())
    verdict = Verdict.PASS if worst < IDENTITY_TOL else Verdict.FAIL
    logger.info("A_%d: gamma=%g, identity residual %.2e (%s)", k, gamma, worst, verdict.value)
    return ComponentResult(expansion=expansion, gamma=gamma, identity=identity, verdict=verdict)


# zeta continuation

def mellin_segment(gamma: float, j: int, z: complex, t0: float) -> complex:
    """
    int_0^{t0} t^{gamma - z - 1} (log t)^j dt continued in z:
        d^j/dw^j [t0^w / w] at w = gamma - z.
    """
    w = complex(gamma) - complex(z)
    if w == 0:
        raise PoleError("Mellin segment evaluated at its pole", gamma=gamma, z=complex(z))
    log_t0 = np.log(t0)
    total = 0.0
    for i in range(j + 1):
        total += comb(j, i) * log_t0 ** (j - i) * (-1) ** i * factorial(i) / w ** (i + 1)
    return complex(t0 ** w * total)


def _is_natural(z: complex) -> bool:
    return abs(z.imag) < LATTICE_TOL and z.real > -LATTICE_TOL and abs(z.real - round(z.real)) < LATTICE_TOL


class ZetaFunction:
    """
    zeta(z) = (1/Gamma(-z)) [sum c t0-Mellin(t^gamma log^j t) + int_{t0}^inf t^{-z-1} Tr e^{-tA} dt].
    """

    def __init__(self, fit: LogPolyExpansion, eigenvalues: np.ndarray, t0: float):
        self.fit = fit
        eigenvalues = np.asarray(eigenvalues, dtype=float)
        # e^{-t lambda} below e^{-HEAT_CUTOFF} on [t0, inf) is dropped
        self.eigenvalues = eigenvalues[eigenvalues <= 1.5 * HEAT_CUTOFF / t0]
        self.t0 = t0
        self.terms = list(fit.terms)
        self.pole_terms = [(g, j) for g, j, _ in fit.terms if fit.is_detected(g, j) or not fit.detected]

    def pole_order(self, gamma: float, j: int) -> int:
        return j + 1 - (1 if _is_natural(complex(gamma)) else 0)

    def poles(self) -> dict:
        orders = {}
        for gamma, j in self.pole_terms:
            order = self.pole_order(gamma, j)
            if order > 0:
                key = round(gamma, 9)
                orders[key] = max(orders.get(key, 0), order)
        return orders

    def _far(self, z: complex) -> complex:
        def heat(t):
            return float(np.sum(np.exp(-t * self.eigenvalues)))

        def part(t, which):
            value = t ** (-z - 1.0) * heat(t)
            return value.real if which == "re" else value.imag
        pieces = [(self.t0, 1.0), (1.0, np.inf)] if self.t0 < 1.0 else [(self.t0, np.inf)]
        total = 0.0
        for lo, hi in pieces:
            re = quad(part, lo, hi, args=("re",), epsabs=0.0, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT)[0]
            im = quad(part, lo, hi, args=("im",), epsabs=0.0, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT)[0]
            total += complex(re, im)
        return total

    def _regular(self, z: complex) -> complex:
        near = sum(c * mellin_segment(gamma, j, z, self.t0) for gamma, j, c in self.terms)
        return complex(rgamma(-z) * (near + self._far(z)))

    def __call__(self, z: complex) -> complex:
        z = complex(z)
        hits = [(gamma, j) for gamma, j, _ in self.terms if abs(complex(gamma) - z) < 1e-12]
        if hits:
            if any(self.pole_order(gamma, j) > 0 for gamma, j in hits):
                raise PoleError("zeta evaluated at a pole", z=z)
            # removable: Gamma(-z) cancels a simple pole of the Mellin transform
            return 0.5 * (self._regular(z + CANCELLED_POLE_OFFSET) + self._regular(z - CANCELLED_POLE_OFFSET))
        return self._regular(z)

    def residue(self, pole: float) -> complex:
        angles = 2.0 * np.pi * np.arange(RESIDUE_POINTS) / RESIDUE_POINTS
        nodes = pole + RESIDUE_RADIUS * np.exp(1j * angles)
        return complex(np.mean([self(w) * (w - pole) for w in nodes]))

    def laurent_order(self, pole: float, step: float = LAURENT_STEP) -> int:
        ratio = abs(self(pole + step)) / max(abs(self(pole + 2.0 * step)), 1e-300)
        return int(round(np.log2(ratio)))


def _lattice_tag(z: float, order: int, mu: float, n: float) -> str:
    simple = _in_shifted_naturals(z * mu + n, 0.0)
    triple = _in_shifted_naturals(z * mu, 0.0) and not _in_shifted_naturals(z, 0.0)
    if order == 1 and simple:
        return "simple"
    if order <= 3 and triple:
        return "triple"
    return "off-lattice"


@dataclass
class ZetaContinuation:
    values: pd.DataFrame
    poles: pd.DataFrame
    function: ZetaFunction


def zeta_continue(series: TraceSeries, fit: LogPolyExpansion, z_grid, spec: SpectralData,
                  t0: float = ZETA_SPLIT) -> ZetaContinuation:
    """
    Meromorphic continuation of zeta(z) = Tr A^z from a heat fit on (0, t0] and
    the spectrum on [t0, inf), with a pole report
    (z_re, z_im, order, residue_re, residue_im, lattice_tag).
    """
    if series.meta.get("kind", "heat") != "heat":
        raise ConfigurationError("zeta continuation needs a heat trace", kind=series.meta.get("kind"))
    if not t0 <= fit.fit_window[1] * (1.0 + 1e-9):
        raise ConfigurationError("split point lies beyond the fitted window", t0=t0, window=fit.fit_window)
    values = spec.all_values()
    if np.any(values <= 0):
        raise ValidationError("zeta continuation needs a positive spectrum", min_eigenvalue=float(values.min()))
    mu = float(series.meta.get("mu", spec.mu))
    n = float(series.meta.get("n", spec.n))

    zeta = ZetaFunction(fit, values, t0)
    rows = []
    for z in np.atleast_1d(z_grid):
        value = zeta(complex(z))
        rows.append({"z_re": complex(z).real, "z_im": complex(z).imag,
                     "zeta_re": value.real, "zeta_im": value.imag})

    poles = []
    for pole, order in sorted(zeta.poles().items()):
        residue = zeta.residue(pole)
        tag = _lattice_tag(pole, order, mu, n)
        if tag == "off-lattice":
            logger.warning("pole at %g of order %d is off the predicted lattice", pole, order)
        poles.append({"z_re": pole, "z_im": 0.0, "order": order, "residue_re": residue.real,
                      "residue_im": residue.imag, "lattice_tag": tag})
    logger.info("zeta: %d grid values, %d poles", len(rows), len(poles))
    return ZetaContinuation(values=pd.DataFrame(rows, columns=["z_re", "z_im", "zeta_re", "zeta_im"]),
                            poles=pd.DataFrame(poles, columns=["z_re", "z_im", "order", "residue_re",
                                                               "residue_im", "lattice_tag"]),
                            function=zeta)


def zeta_checks(result: ZetaContinuation, fit: LogPolyExpansion, leading_exponent: float, direct: complex,
                at: float = -3.0) -> pd.DataFrame:
    """
    Verdict table for a continued zeta function.

    The pole nearest the free-leading heat exponent must sit within POLE_TOL
    of it, its residue must match -c_lead to RESIDUE_REL_TOL, the continuation
    at `at` must agree with the direct power sum to ZETA_DIRECT_TOL, and every
    pole must be on the lattice and not left of the leading one.
    """
    poles = result.poles
    rows = []
    if poles.empty:
        rows.append(_check_row("pole_location", np.inf, POLE_TOL, False))
    else:
        nearest = poles.loc[(poles["z_re"] - leading_exponent).abs().idxmin()]
        offset = abs(nearest["z_re"] - leading_exponent)
        rows.append(_check_row("pole_location", offset, POLE_TOL, offset <= POLE_TOL))
        expected = -complex(fit.coefficient(float(nearest["z_re"]))).real
        mismatch = abs(nearest["residue_re"] - expected) / max(abs(expected), 1e-300)
        rows.append(_check_row("leading_residue", mismatch, RESIDUE_REL_TOL, mismatch <= RESIDUE_REL_TOL))

    gap = abs(result.function(complex(at)) - complex(direct))
    rows.append(_check_row("direct_power_sum", gap, ZETA_DIRECT_TOL, gap <= ZETA_DIRECT_TOL))
    off = int((poles["lattice_tag"] == "off-lattice").sum()) if not poles.empty else 0
    rows.append(_check_row("off_lattice_poles", off, 0, off == 0))
    beyond = int((poles["z_re"] < leading_exponent - POLE_TOL).sum()) if not poles.empty else 0
    rows.append(_check_row("poles_beyond_leading", beyond, 0, beyond == 0))
    return pd.DataFrame(rows, columns=["check", "value", "threshold", "verdict"])
