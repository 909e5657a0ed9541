import logging
from dataclasses import dataclass, field
from math import factorial
from typing import Callable, Optional, Union

import numpy as np
import pandas as pd
from numpy.polynomial.legendre import leggauss
from scipy.integrate import quad
from scipy.special import jv

from utils.coneop import ConeOperator, Discretization, bessel_zeros_below, resolvent_solve
from utils.errors import ConfigurationError, NumericalError, ValidationError
from utils.symbols import smooth_step

logger = logging.getLogger(__name__)

# a retained sample needs its truncation bound below this fraction of its value
TAIL_FRACTION = 0.01
TAIL_SAFETY = 2.0
TAIL_BLOCK = 1024
TAIL_MAX_TERMS = 200_000
MISSING_MODE_CAP = 100_000
WEYL_FIT_POINTS = 10
REQUIRED_COUNT_DOUBLINGS = 24
# e^{-HEAT_CUTOFF} is treated as negligible when sizing spectra
HEAT_CUTOFF = 40.0

CONTOUR_A = -1.0
CONTOUR_DELTA = np.pi / 4
CONTOUR_TOL = 1e-8
CONTOUR_R_MAX = 1e12


def tip_cutoff(inner: float = 0.5, outer: float = 0.9) -> Callable:
    """phi(x) = 1 on [0, inner], 0 on [outer, inf), smooth in between."""
    if not 0 < inner < outer:
        raise ConfigurationError("cutoff needs 0 < inner < outer", inner=inner, outer=outer)

    def phi(x):
        return 1.0 - smooth_step((np.asarray(x, dtype=float) - inner) / (outer - inner))
    return phi


@dataclass(frozen=True)
class WeightOperator:
    """B = x^{-beta} phi(x) times the per-mode multiplier <m>^{mu'}."""
    beta: float = 0.0
    cutoff: Optional[Callable] = None
    mellin_order: float = 0.0
    support_end: float = 1.0

    @property
    def is_identity(self) -> bool:
        return self.beta == 0 and self.cutoff is None and self.mellin_order == 0

    def multiplier(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        value = x ** (-self.beta)
        if self.cutoff is not None:
            value = value * self.cutoff(x)
        return value

    def mode_factor(self, m: int) -> float:
        return (1.0 + m ** 2) ** (self.mellin_order / 2.0)


IDENTITY = WeightOperator()


def weight_operator(beta: float = 0.0, inner: float = 0.5, outer: float = 0.9,
                    mellin_order: float = 0.0) -> WeightOperator:
    return WeightOperator(beta=beta, cutoff=tip_cutoff(inner, outer), mellin_order=mellin_order,
                          support_end=outer)


@dataclass
class SpectralData:
    """
    Eigenvalues per mode (ascending) with truncation metadata.

    mode_floor(m) bounds from below the first eigenvalue of any mode absent
    from `eigenvalues`; None means no mode is missing. expectation(B, m)
    returns <B u_k, u_k> for the retained eigenfunctions of mode m.
    """
    eigenvalues: dict
    provenance: str
    mu: float = 2.0
    n: int = 2
    mode_floor: Optional[Callable] = None
    expectation: Optional[Callable] = None

    @property
    def modes(self) -> list:
        return sorted(self.eigenvalues)

    @property
    def count(self) -> int:
        return int(sum(len(v) for v in self.eigenvalues.values()))

    def all_values(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.eigenvalues[m], dtype=float) for m in self.modes])

    def weights(self, B: WeightOperator) -> dict:
        if B.is_identity:
            return {m: np.ones(len(self.eigenvalues[m])) for m in self.modes}
        if self.expectation is None:
            raise ConfigurationError("spectral data carries no eigenfunctions for a weighted trace",
                                     provenance=self.provenance)
        return {m: np.asarray(self.expectation(B, m), dtype=float) for m in self.modes}

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for m in self.modes:
            for k, value in enumerate(self.eigenvalues[m], start=1):
                rows.append({"mode": m, "k": k, "eigenvalue": value, "provenance": self.provenance})
        return pd.DataFrame(rows, columns=["mode", "k", "eigenvalue", "provenance"])


def _laplace_nu(op: ConeOperator, m: int) -> float:
    return float(np.sqrt(op.indicial_coefficients(m)[0].real))


def _check_oracle_operator(op: ConeOperator):
    if op.x_perturbation is not None or op.mu != 2 or not op.is_symmetric_second_order():
        raise ConfigurationError("Bessel oracle needs a frozen mu = 2 Laplace-type operator", operator=op.name)
    for m in (0, 1):
        c = op.indicial_coefficients(m)
        if abs(c[2] - 1.0) > 1e-14:
            raise ConfigurationError("Bessel oracle needs unit leading coefficient", operator=op.name)


def _bessel_expectation(nu: float, zeros: np.ndarray, B: WeightOperator) -> np.ndarray:
    """2 int_0^1 x^{1-beta} phi(x) J_nu(j x)^2 dx / J_{nu+1}(j)^2 for each zero j."""
    if len(zeros) == 0:
        return np.array([])
    end = min(B.support_end, 1.0)
    order = int(1.5 * zeros.max() * end) + 80
    nodes, weights = leggauss(order)
    x = 0.5 * end * (nodes + 1.0)
    w = 0.5 * end * weights
    profile = x * B.multiplier(x)
    values = jv(nu, np.outer(zeros, x)) ** 2
    integral = values @ (w * profile)
    return 2.0 * integral / jv(nu + 1.0, zeros) ** 2


def oracle_spectrum(op: ConeOperator, lambda_cut: float) -> SpectralData:
    """
    Exact spectrum of the frozen Laplace-type model below lambda_cut: per mode
    the squares of the Bessel zeros j_{nu,k} with nu = sqrt(c_0(m)).
    """
    _check_oracle_operator(op)
    root_cut = np.sqrt(lambda_cut)
    eigenvalues = {}
    zeros_by_mode = {}
    m = 0
    while _laplace_nu(op, m) < root_cut:
        zeros = bessel_zeros_below(_laplace_nu(op, m), root_cut)
        if len(zeros) == 0:
            break
        for mode in {m, -m}:
            zeros_by_mode[mode] = zeros
            eigenvalues[mode] = zeros ** 2
        m += 1
    logger.info("oracle spectrum below %.3g: %d modes, %d eigenvalues",
                lambda_cut, len(eigenvalues), sum(len(v) for v in eigenvalues.values()))

    cache = {}

    def expectation(B, mode):
        key = (id(B), mode)
        if key not in cache:
            values = _bessel_expectation(_laplace_nu(op, mode), zeros_by_mode[mode], B)
            cache[key] = values * B.mode_factor(mode)
        return cache[key]

    def mode_floor(mode):
        # j_{nu,1} > nu, and every absent mode starts above the cut
        return max(op.indicial_coefficients(mode)[0].real, lambda_cut)

    return SpectralData(eigenvalues=eigenvalues, provenance="oracle", mu=op.mu, n=op.n,
                        mode_floor=mode_floor, expectation=expectation)


def single_mode_spectrum(values, provenance: str = "oracle", mu: float = 2.0) -> SpectralData:
    """One-mode spectral data (a one-dimensional problem, n = 1)."""
    return SpectralData(eigenvalues={0: np.sort(np.asarray(values, dtype=float))},
                        provenance=provenance, mu=mu, n=1)


def spectrum(disc: Discretization, count: int) -> SpectralData:
    """Lowest `count` eigenvalues per mode of the discretization, with eigenfunctions."""
    eigenvalues = {}
    vectors = {}
    for m in disc.modes:
        values, vecs = disc.eigenpairs(m, count)
        eigenvalues[m] = values
        vectors[m] = vecs
    x = disc.x_grid

    def expectation(B, mode):
        u = vectors[mode]
        # eigenvectors are normalized by u^T W u = 1
        density = disc.weight * B.multiplier(x)
        return (density @ (u ** 2)) * B.mode_factor(mode)

    def mode_floor(mode):
        # Rayleigh quotient: lambda >= c_0(m) since the weight e^{mu s} <= 1
        return float(disc.op.indicial_coefficients(mode)[0].real)

    return SpectralData(eigenvalues=eigenvalues, provenance="discretization", mu=disc.op.mu,
                        n=disc.op.n, mode_floor=mode_floor, expectation=expectation)


def full_spectrum(disc: Discretization) -> SpectralData:
    """Every eigenvalue of the discrete pencil, all modes; nothing is truncated."""
    eigenvalues = {m: disc.eigenvalues(m) for m in disc.modes}
    return SpectralData(eigenvalues=eigenvalues, provenance="discretization", mu=disc.op.mu,
                        n=disc.op.n, mode_floor=None)


@dataclass
class TraceSeries:
    param: np.ndarray
    values: np.ndarray
    tail_bound: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.param)

    def to_frame(self) -> pd.DataFrame:
        values = np.asarray(self.values, dtype=complex)
        return pd.DataFrame({"param": self.param, "value_re": values.real, "value_im": values.imag,
                             "tail_bound": self.tail_bound})

    def window(self, lo: float, hi: float) -> "TraceSeries":
        mask = (self.param >= lo) & (self.param <= hi)
        return TraceSeries(param=self.param[mask], values=self.values[mask],
                           tail_bound=self.tail_bound[mask], meta=dict(self.meta))


def _weyl_fit(values: np.ndarray):
    """sqrt(lambda_k) ~ c1 k + c0 from the last retained eigenvalues of one mode."""
    roots = np.sqrt(np.maximum(values, 0.0))
    count = len(roots)
    if count >= 3:
        used = min(WEYL_FIT_POINTS, count)
        k = np.arange(count - used + 1, count + 1)
        c1, c0 = np.polyfit(k, roots[-used:], 1)
        if c1 > 0:
            return float(c1), float(c0)
    c1 = np.pi
    last = roots[-1] if count else 0.0
    return c1, float(last - c1 * count)


def _series(first_root: float, step: float, summand: Callable) -> complex:
    """sum_{k >= 0} summand((first_root + step k)^2), stopped once terms are negligible."""
    total = 0.0
    start = 0
    while start < TAIL_MAX_TERMS:
        roots = first_root + step * np.arange(start, start + TAIL_BLOCK)
        terms = summand(roots ** 2)
        total = total + terms.sum()
        start += TAIL_BLOCK
        if abs(terms[-1]) <= 1e-10 * max(abs(total), 1e-300):
            break
    return total


@dataclass
class _TailModel:
    fits: dict
    scales: dict
    missing_scale: float
    typical_step: float


def _tail_model(spec: SpectralData, weights: dict) -> _TailModel:
    fits = {m: _weyl_fit(np.asarray(spec.eigenvalues[m])) for m in spec.modes if len(spec.eigenvalues[m])}
    scales = {m: float(np.mean(np.abs(weights[m][-5:]))) if len(weights.get(m, ())) else 1.0 for m in fits}
    # missing modes inherit the scale of the outermost retained modes
    missing = 1.0
    if scales:
        edge = max(abs(m) for m in scales)
        missing = float(np.mean([scales[m] for m in scales if abs(m) == edge]))
    steps = [c1 for c1, _ in fits.values()]
    return _TailModel(fits=fits, scales=scales, missing_scale=missing,
                      typical_step=float(np.median(steps)) if steps else np.pi)


def _mode_tails(spec: SpectralData, model: _TailModel, summand: Callable, counts: Optional[dict] = None) -> complex:
    total = 0.0
    for m, (c1, c0) in model.fits.items():
        count = len(spec.eigenvalues[m]) if counts is None else counts[m]
        total = total + model.scales[m] * _series(c1 * (count + 1) + c0, c1, summand)
    return total


def _missing_modes_tail(spec: SpectralData, model: _TailModel, summand: Callable, reference: float) -> complex:
    if spec.mode_floor is None or not spec.modes:
        return 0.0
    total = 0.0
    edge = max(abs(m) for m in spec.modes)
    for m in range(edge + 1, MISSING_MODE_CAP):
        contribution = 0.0
        for mode in (m, -m):
            contribution = contribution + _series(np.sqrt(spec.mode_floor(mode)), model.typical_step, summand)
        total = total + contribution
        if abs(contribution) * m <= 1e-4 * max(abs(reference), 1e-300):
            break
    return total * model.missing_scale


def _extrapolated_tail(spec: SpectralData, model: _TailModel, summand: Callable, reference: float) -> complex:
    """Extrapolated weighted contribution of every eigenvalue absent from the data."""
    return _mode_tails(spec, model, summand) + _missing_modes_tail(spec, model, summand, reference)


def _required_count(spec: SpectralData, model: _TailModel, summand: Callable, value: complex,
                    missing: complex) -> Optional[int]:
    """
    Smallest per-mode count whose weighted tail, with the missing modes unchanged,
    passes the tail test. None when the missing modes alone fail it.
    """
    target = TAIL_FRACTION * abs(value) / TAIL_SAFETY - abs(missing)
    if target <= 0:
        return None
    current = {m: len(spec.eigenvalues[m]) for m in model.fits}
    count = max(current.values(), default=0) + 1
    for _ in range(REQUIRED_COUNT_DOUBLINGS):
        counts = {m: max(count, n) for m, n in current.items()}
        if abs(_mode_tails(spec, model, summand, counts)) < target:
            return count
        count *= 2
    return None


def _checked(value: complex, tail: complex, param: float, spec: SpectralData, model: _TailModel,
             summand: Callable) -> float:
    bound = TAIL_SAFETY * abs(tail)
    if bound >= TAIL_FRACTION * abs(value):
        missing = _missing_modes_tail(spec, model, summand, value)
        raise ValidationError("insufficient spectrum for the requested sample", param=param,
                              value=complex(value), tail_bound=bound,
                              required_count=_required_count(spec, model, summand, value, missing),
                              missing_mode_tail=abs(missing))
    return bound


def weighted_heat_trace(spec: SpectralData, B: WeightOperator, t_grid) -> TraceSeries:
    """Tr B e^{-tA} = sum_j e^{-t lambda_j} <B u_j, u_j>."""
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid <= 0):
        raise ConfigurationError("heat traces need t > 0")
    weights = spec.weights(B)
    values = spec.all_values()
    w = np.concatenate([weights[m] for m in spec.modes])
    model = _tail_model(spec, weights)

    traces = np.exp(-np.outer(t_grid, values)) @ w
    bounds = []
    for t, value in zip(t_grid, traces):
        summand = (lambda lam, t=t: np.exp(-t * lam))
        tail = _extrapolated_tail(spec, model, summand, value)
        bounds.append(_checked(value, tail, t, spec, model, summand))
    meta = {"kind": "heat", "mu": spec.mu, "n": spec.n, "beta": B.beta, "mu_prime": B.mellin_order}
    logger.info("heat trace on %d samples t in [%.3g, %.3g]", len(t_grid), t_grid.min(), t_grid.max())
    return TraceSeries(param=t_grid, values=traces, tail_bound=np.asarray(bounds), meta=meta)


def heat_trace(spec: SpectralData, t_grid) -> TraceSeries:
    """Tr e^{-tA} as an eigen-sum with a Weyl-extrapolated tail bound."""
    return weighted_heat_trace(spec, IDENTITY, t_grid)


@dataclass(frozen=True)
class Contour:
    """a + r e^{+-i delta}, r >= 0, surrounding the positive spectrum counterclockwise."""
    a: float = CONTOUR_A
    delta: float = CONTOUR_DELTA
    tol: float = CONTOUR_TOL
    r_max: float = CONTOUR_R_MAX

    def __post_init__(self):
        if self.a >= 0:
            raise ConfigurationError("contour vertex must be negative", a=self.a)
        if not 0 < self.delta < np.pi / 2:
            raise ConfigurationError("contour angle must lie in (0, pi/2)", delta=self.delta)


def _solve_power(disc: Discretization, lam: complex, N: int, mode: int) -> complex:
    """Tr (A - lam)^{-N} for one mode by repeated solves against the identity."""
    block = np.eye(len(disc.weight), dtype=complex)
    for _ in range(N):
        block = resolvent_solve(disc, lam, block, mode)
    return complex(np.trace(block))


def heat_trace_contour(source: Union[SpectralData, Discretization], t: float, N: int = 2,
                       contour: Optional[Contour] = None) -> float:
    """
    Tr e^{-tA} from the resolvent powers:
        (N-1)! (-t)^{1-N} (1/2 pi i) \\oint e^{-t lam} Tr (lam - A)^{-N} d lam.
    By conjugate symmetry only the lower ray is integrated, decade by decade,
    until a decade contributes below the tolerance.

    For a Discretization, Tr (lam - A)^{-N} comes from N banded resolvent
    solves per mode against the identity. For SpectralData it is the sum
    sum_j (lam - lambda_j)^{-N}, the same trace in the eigenbasis.
    """
    if N < 2:
        raise ConfigurationError("contour representation needs N >= 2", N=N)
    if t <= 0:
        raise ConfigurationError("heat traces need t > 0", t=t)
    contour = contour or Contour()
    direction = np.exp(-1j * contour.delta)
    if isinstance(source, Discretization):
        def resolvent_trace(lam):
            return (-1) ** N * sum(_solve_power(source, lam, N, m) for m in source.modes)
    else:
        values = source.all_values()

        def resolvent_trace(lam):
            return np.sum((lam - values) ** (-N))

    def integrand(r):
        lam = contour.a + r * direction
        resolvent = resolvent_trace(lam)
        return float(np.imag(np.exp(-t * lam) * resolvent * direction))

    total = 0.0
    lo, hi = 0.0, 1.0
    while True:
        piece, _error = quad(integrand, lo, hi, epsabs=0.0, epsrel=1e-11, limit=200)
        total += piece
        if hi >= 10.0 / t and abs(piece) <= contour.tol * abs(total):
            break
        if hi >= contour.r_max:
            raise NumericalError("contour quadrature did not converge", t=t, remainder=abs(piece),
                                 radius=hi)
        lo, hi = hi, 10.0 * hi
    return float(factorial(N - 1) * (-t) ** (1 - N) * total / np.pi)


def resolvent_power_trace(spec: SpectralData, B: WeightOperator, N: int, lam_grid) -> TraceSeries:
    """Tr B (A - lambda)^{-N} = sum_j <B u_j, u_j> (lambda_j - lambda)^{-N} along a ray."""
    n = spec.n
    if not N * spec.mu - B.mellin_order > n:
        raise ConfigurationError("trace class needs N mu - mu' > n", N=N, mu=spec.mu,
                                 mu_prime=B.mellin_order, n=n)
    lam_grid = np.asarray(lam_grid, dtype=complex)
    weights = spec.weights(B)
    values = spec.all_values()
    w = np.concatenate([weights[m] for m in spec.modes])
    model = _tail_model(spec, weights)

    traces = []
    bounds = []
    for lam in lam_grid:
        distance = np.min(np.abs(values - lam))
        if distance < 1e-8 * max(1.0, abs(lam)):
            raise NumericalError("lambda too close to the spectrum", lam=complex(lam), distance=float(distance))
        value = np.sum(w * (values - lam) ** (-N))
        summand = (lambda mu_, lam=lam: (mu_ - lam) ** (-N))
        tail = _extrapolated_tail(spec, model, summand, value)
        bounds.append(_checked(value, tail, abs(lam), spec, model, summand))
        traces.append(value)
    meta = {"kind": "resolvent", "mu": spec.mu, "n": n, "N": N, "beta": B.beta,
            "mu_prime": B.mellin_order, "arg": float(np.angle(lam_grid[0])) if len(lam_grid) else np.pi}
    return TraceSeries(param=np.abs(lam_grid), values=np.asarray(traces), tail_bound=np.asarray(bounds),
                       meta=meta)


def complex_power_sum(spec: SpectralData, z: complex):
    """
    zeta(z) = sum_j lambda_j^z for Re z < -n/mu - 1/2.

    Returns:
        (value, tail_bound)
    """
    z = complex(z)
    if not z.real < -spec.n / spec.mu - 0.5:
        raise ConfigurationError("power sum needs Re z < -n/mu - 1/2", z=z, n=spec.n, mu=spec.mu)
    values = spec.all_values()
    if np.any(values <= 0):
        raise ValidationError("complex powers need a positive spectrum", min_eigenvalue=float(values.min()))
    weights = {m: np.ones(len(spec.eigenvalues[m])) for m in spec.modes}
    model = _tail_model(spec, weights)
    value = np.sum(values ** z)
    if z.imag == 0:
        value = float(value.real)
    tail = _extrapolated_tail(spec, model, lambda lam: lam ** z, value)
    bound = TAIL_SAFETY * abs(tail)
    if bound >= TAIL_FRACTION * abs(value):
        raise ValidationError("power-sum tail above tolerance", z=z, tail_bound=bound, value=complex(value))
    return value, bound
