import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import pandas as pd
from numpy.polynomial import Polynomial
from scipy.linalg import LinAlgError, eigh_tridiagonal, eigvalsh_tridiagonal, solve_banded
from scipy.optimize import brentq
from scipy.special import jv

from utils.errors import ConfigurationError, NumericalError, Verdict
from utils.symbols import Sector, SymbolGrid

logger = logging.getLogger(__name__)

ROOT_CLUSTER_TOL = 1e-6
ROOT_RESIDUAL_TOL = 1e-10
BESSEL_SCAN_STEP = 0.25
BESSEL_XTOL = 1e-14
# abstol for bisection; twice the underflow threshold gives high relative accuracy
# on the scaled diagonally dominant tridiagonals produced here
BISECTION_ABSTOL = 2 * np.finfo(float).tiny

MODEL_S_MIN = -12.0
MODEL_S_MAX = 4.0
MODEL_BASE_POINTS = 399
MODEL_LAMBDA_MODULI = (1e2, 1e4)


@dataclass
class ConeOperator:
    """
    A = x^{-mu} sum_j c_j(m; x) (xD_x)^j on (0,1] x S^1, one Fourier mode m at a time.

    coefficients(m) returns c_j(m) at x = 0 in ascending powers of sigma
    (trial functions x^{i sigma}, xD_x -> sigma). x_perturbation(m, x) is an
    additive correction to c_0 that vanishes at x = 0.
    """
    mu: float
    mode_cap: int
    coefficients: Callable
    alpha: float = 1.0
    x_perturbation: Optional[Callable] = None
    n: int = 2
    name: str = "cone-operator"

    @property
    def modes(self) -> list:
        return list(range(-self.mode_cap, self.mode_cap + 1))

    def indicial_coefficients(self, m: int) -> np.ndarray:
        return np.asarray(self.coefficients(m), dtype=complex)

    def potential(self, m: int, x) -> np.ndarray:
        """c_0(m; x) of a symmetric second-order family."""
        x = np.asarray(x, dtype=float)
        value = np.full(x.shape, self.indicial_coefficients(m)[0].real)
        if self.x_perturbation is not None:
            value = value + self.x_perturbation(m, x)
        return value

    def frozen(self) -> "ConeOperator":
        """The operator with coefficients frozen at x = 0."""
        return ConeOperator(mu=self.mu, mode_cap=self.mode_cap, coefficients=self.coefficients,
                            alpha=self.alpha, x_perturbation=None, n=self.n, name=f"{self.name}-frozen")

    def is_symmetric_second_order(self) -> bool:
        for m in self.modes:
            c = self.indicial_coefficients(m)
            if len(c) != 3 or abs(c[1]) > 0 or abs(c[2].imag) > 0 or c[2].real <= 0 or abs(c[0].imag) > 0:
                return False
        return True


def laplace_type(n: int = 2, a: float = 1.5, mode_cap: int = 8, alpha: float = 1.0,
                 perturbation: Optional[Callable] = None) -> ConeOperator:
    """
    x^{-2}((xD_x)^2 - Delta_Y + (n-2)^2/4 + a^2) with Y = S^1, so -Delta_Y -> m^2.
    perturbation(x) is added to c_0 for every mode and must vanish at x = 0.
    """
    if a < 0:
        raise ConfigurationError("a must be nonnegative", a=a)
    shift = (n - 2) ** 2 / 4.0 + a ** 2

    def coefficients(m):
        return [m ** 2 + shift, 0.0, 1.0]

    x_perturbation = None
    if perturbation is not None:
        if abs(float(perturbation(np.array(0.0)))) > 1e-14:
            raise ConfigurationError("x-perturbation must vanish at x = 0")

        def x_perturbation(m, x):
            return perturbation(x)

    return ConeOperator(mu=2.0, mode_cap=mode_cap, coefficients=coefficients, alpha=alpha,
                        x_perturbation=x_perturbation, n=n, name=f"laplace-type(n={n}, a={a})")


def polynomial_operator(poly_coefficients: list, mu: float = 2.0, alpha: float = 1.0) -> ConeOperator:
    """Single-mode operator with a user-given indicial polynomial (ascending powers)."""
    return ConeOperator(mu=mu, mode_cap=0, coefficients=lambda m: poly_coefficients, alpha=alpha,
                        name="polynomial-operator")


def from_config(cfg) -> ConeOperator:
    """Operator described by an ExperimentConfig."""
    perturbation = None
    if cfg.perturbation:
        powers = np.concatenate([[0.0], np.asarray(cfg.perturbation, dtype=float)])
        polynomial = Polynomial(powers)

        def perturbation(x):
            return polynomial(x)

    return laplace_type(n=cfg.n, a=cfg.a, mode_cap=cfg.mode_cap, alpha=cfg.alpha, perturbation=perturbation)


def conormal_symbol(op: ConeOperator) -> dict:
    """Mode -> indicial polynomial p_m(sigma) built from the x -> 0 coefficients."""
    return {m: Polynomial(op.indicial_coefficients(m)) for m in op.modes}


@dataclass
class BoundarySpectrum:
    poles: list = field(default_factory=list)  # (sigma, order, mode)

    def __len__(self):
        return len(self.poles)

    def min_abs_imag(self) -> float:
        return min((abs(sigma.imag) for sigma, _, _ in self.poles), default=np.inf)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [{"mode": mode, "sigma_re": sigma.real, "sigma_im": sigma.imag, "order": order}
             for sigma, order, mode in self.poles],
            columns=["mode", "sigma_re", "sigma_im", "order"],
        )


def _polish_root(poly: Polynomial, root: complex, multiplicity: int, mode: int) -> complex:
    # Newton on the (multiplicity-1)-th derivative, which has a simple root there
    target = poly.deriv(multiplicity - 1) if multiplicity > 1 else poly
    slope = target.deriv()
    for _ in range(20):
        denominator = slope(root)
        if denominator == 0:
            break
        step = target(root) / denominator
        root = root - step
        if abs(step) <= 1e-16 * max(1.0, abs(root)):
            break
    scale = np.sum(np.abs(target.coef)) * max(1.0, abs(root)) ** max(target.degree(), 0)
    residual = abs(target(root)) / scale
    if residual > ROOT_RESIDUAL_TOL:
        raise NumericalError("indicial root did not converge", mode=mode, residual=residual)
    return complex(root)


def _cluster_roots(roots: np.ndarray) -> list:
    clusters = []
    for root in sorted(roots, key=lambda r: (r.imag, r.real)):
        for cluster in clusters:
            if abs(np.mean(cluster) - root) < ROOT_CLUSTER_TOL:
                cluster.append(root)
                break
        else:
            clusters.append([root])
    return clusters


def boundary_spectrum(op: ConeOperator, strip: float, mode_cap: Optional[int] = None) -> BoundarySpectrum:
    """Roots sigma of p_m with |Im sigma| <= strip for |m| <= mode_cap, with multiplicities."""
    mode_cap = op.mode_cap if mode_cap is None else mode_cap
    poles = []
    for m in range(-mode_cap, mode_cap + 1):
        poly = Polynomial(op.indicial_coefficients(m)).trim()
        if poly.degree() == 0:
            if poly.coef[0] == 0:
                raise ConfigurationError("indicial family vanishes identically", mode=m)
            continue
        for cluster in _cluster_roots(poly.roots()):
            multiplicity = len(cluster)
            sigma = _polish_root(poly, complex(np.mean(cluster)), multiplicity, m)
            if abs(sigma.imag) <= strip + 1e-12:
                poles.append((sigma, multiplicity, m))
    poles.sort(key=lambda pole: (pole[2], pole[0].imag, pole[0].real))
    logger.info("boundary spectrum: %d poles with |Im sigma| <= %s over %d modes",
                len(poles), strip, 2 * mode_cap + 1)
    return BoundarySpectrum(poles=poles)


@dataclass
class Discretization:
    """
    Log-grid realization of a symmetric second-order cone operator: per mode the
    stiffness K = -c_2 d_s^2 + c_0(m; e^s) (centered differences, Dirichlet at
    both ends) and the weight W = e^{mu s}, giving the pencil K u = lambda W u.
    """
    op: ConeOperator
    s_grid: np.ndarray
    h: float
    s_min: float
    s_max: float
    weight: np.ndarray
    potentials: dict

    @property
    def x_grid(self) -> np.ndarray:
        return np.exp(self.s_grid)

    @property
    def modes(self) -> list:
        return sorted(self.potentials)

    @property
    def resolution(self) -> dict:
        return {"h": self.h, "s_min": self.s_min, "s_max": self.s_max, "npoints": len(self.s_grid),
                "h_times_span": self.h * abs(self.s_min)}

    def bands(self, m: int):
        c2 = self.op.indicial_coefficients(m)[2].real
        main = 2.0 * c2 / self.h ** 2 + self.potentials[m]
        off = np.full(len(self.s_grid) - 1, -c2 / self.h ** 2)
        return main, off

    def stiffness(self, m: int) -> np.ndarray:
        main, off = self.bands(m)
        return np.diag(main) + np.diag(off, 1) + np.diag(off, -1)

    def scaled_bands(self, m: int):
        """Bands of W^{-1/2} K W^{-1/2}."""
        main, off = self.bands(m)
        root = np.sqrt(self.weight)
        return main / self.weight, off / (root[:-1] * root[1:])

    def eigenvalues(self, m: int, count: Optional[int] = None) -> np.ndarray:
        d, e = self.scaled_bands(m)
        if count is None:
            return eigvalsh_tridiagonal(d, e, lapack_driver="stebz", tol=BISECTION_ABSTOL)
        count = min(count, len(d))
        return eigvalsh_tridiagonal(d, e, select="i", select_range=(0, count - 1),
                                    lapack_driver="stebz", tol=BISECTION_ABSTOL)

    def eigenpairs(self, m: int, count: int):
        """Lowest eigenpairs; eigenvectors normalized so that u^T W u = 1."""
        d, e = self.scaled_bands(m)
        count = min(count, len(d))
        values, vectors = eigh_tridiagonal(d, e, select="i", select_range=(0, count - 1),
                                           lapack_driver="stebz", tol=BISECTION_ABSTOL)
        return values, vectors / np.sqrt(self.weight)[:, None]

    def apply(self, m: int, u: np.ndarray) -> np.ndarray:
        """W^{-1} K u, the discrete A acting on a grid function."""
        main, off = self.bands(m)
        result = main * u
        result[:-1] += off * u[1:]
        result[1:] += off * u[:-1]
        return result / self.weight

    def inner(self, u: np.ndarray, v: np.ndarray) -> complex:
        """Discrete weighted inner product h * sum(e^{mu s} u conj(v))."""
        return self.h * np.sum(self.weight * u * np.conj(v))

    def norm(self, u: np.ndarray) -> float:
        return float(np.sqrt(abs(self.inner(u, u))))


def discretize(op: ConeOperator, s_min: float = -12.0, npoints: int = 2000, s_max: float = 0.0,
               modes: Optional[list] = None, frozen: bool = False) -> Discretization:
    if s_min >= -5:
        raise ConfigurationError("s_min must lie below -5", s_min=s_min)
    if npoints < 100:
        raise ConfigurationError("npoints must be at least 100", npoints=npoints)
    if not op.is_symmetric_second_order():
        raise ConfigurationError("discretization needs c_2 > 0, c_1 = 0 and real c_0", operator=op.name)
    if frozen:
        op = op.frozen()

    h = (s_max - s_min) / (npoints + 1)
    s_grid = s_min + h * np.arange(1, npoints + 1)
    x_grid = np.exp(s_grid)
    modes = op.modes if modes is None else list(modes)
    potentials = {m: op.potential(m, x_grid) for m in modes}
    logger.info("discretized %s: %d points on [%s, %s], h=%.3e, %d modes",
                op.name, npoints, s_min, s_max, h, len(modes))
    return Discretization(op=op, s_grid=s_grid, h=h, s_min=s_min, s_max=s_max,
                          weight=np.exp(op.mu * s_grid), potentials=potentials)


def _bessel_zero_brackets(nu: float, start: float, stop: float):
    grid = np.arange(start, stop + BESSEL_SCAN_STEP, BESSEL_SCAN_STEP)
    values = jv(nu, grid)
    exact = np.flatnonzero(values == 0.0)
    crossings = np.flatnonzero(values[:-1] * values[1:] < 0)
    return grid, values, exact, crossings


def bessel_zeros_below(nu: float, limit: float) -> np.ndarray:
    """All positive zeros of J_nu below limit, refined by bracketed root finding."""
    if nu < 0:
        raise ConfigurationError("Bessel order must be nonnegative", nu=nu)
    # J_nu has no zero in (0, nu]
    start = max(nu, 1e-3)
    if limit <= start:
        return np.array([])
    grid, values, exact, crossings = _bessel_zero_brackets(nu, start, limit)
    zeros = [grid[i] for i in exact]
    for i in crossings:
        lo, hi = grid[i], grid[i + 1]
        try:
            zeros.append(brentq(lambda x: jv(nu, x), lo, hi, xtol=BESSEL_XTOL, rtol=4 * np.finfo(float).eps))
        except (ValueError, RuntimeError) as exc:
            raise NumericalError("Bessel zero bracketing failed", nu=nu, interval=(lo, hi),
                                 values=(float(values[i]), float(values[i + 1]))) from exc
    zeros = np.sort(np.asarray(zeros, dtype=float))
    return zeros[zeros < limit]


def bessel_oracle(nu: float, count: int) -> np.ndarray:
    """The first `count` Dirichlet eigenvalues j_{nu,k}^2 of the frozen mu = 2 mode."""
    if count < 1:
        raise ConfigurationError("count must be positive", count=count)
    # McMahon: j_{nu,k} ~ (k + nu/2 - 1/4) pi, plus room for the turning region
    limit = (count + nu / 2.0 + 1.0) * np.pi + nu + 10.0
    zeros = bessel_zeros_below(nu, limit)
    while len(zeros) < count:
        limit *= 1.5
        zeros = bessel_zeros_below(nu, limit)
    return zeros[:count] ** 2


def kappa_scale(rho: float, u: np.ndarray, s_grid: np.ndarray) -> np.ndarray:
    """(kappa_rho u)(s) = u(s + log rho) on the log-grid, zero outside the domain."""
    if rho <= 0:
        raise ConfigurationError("scaling factor must be positive", rho=rho)
    u = np.asarray(u)
    h = s_grid[1] - s_grid[0]
    shift = np.log(rho)
    cells = shift / h
    if abs(cells - round(cells)) < 1e-9:
        k = int(round(cells))
        result = np.zeros_like(u)
        if k >= 0:
            result[:len(u) - k] = u[k:]
            lost = u[:k]
        else:
            result[-k:] = u[:len(u) + k]
            lost = u[len(u) + k:]
    else:
        target = s_grid + shift
        result = np.interp(target, s_grid, u.real, left=0.0, right=0.0)
        if np.iscomplexobj(u):
            result = result + 1j * np.interp(target, s_grid, u.imag, left=0.0, right=0.0)
        outside = (s_grid - shift < s_grid[0]) | (s_grid - shift > s_grid[-1])
        lost = u[outside]
    if np.any(np.abs(lost) > 1e-12 * max(np.max(np.abs(u)), 1e-300)):
        logger.warning("kappa scaling by %.3g pushes support past the grid; result truncated", rho)
    return result


def _banded(main, off, shift_diag):
    ab = np.zeros((3, len(main)), dtype=complex)
    ab[0, 1:] = off
    ab[1, :] = main - shift_diag
    ab[2, :-1] = off
    return ab


def resolvent_solve(disc: Discretization, lam: complex, rhs: np.ndarray, mode: int = 0) -> np.ndarray:
    """Solve (K - lambda W) u = W rhs for one mode; rhs may hold several columns."""
    main, off = disc.bands(mode)
    ab = _banded(main, off, lam * disc.weight)
    rhs = np.asarray(rhs, dtype=complex)
    column = (lambda v: v) if rhs.ndim == 1 else (lambda v: v[:, None])
    b = column(disc.weight) * rhs
    try:
        u = solve_banded((1, 1), ab, b)
    except (LinAlgError, ValueError) as exc:
        raise NumericalError("resolvent system is singular", lam=complex(lam), mode=mode) from exc
    residual = column(ab[1]) * u
    residual[:-1] += column(ab[0, 1:]) * u[1:]
    residual[1:] += column(ab[2, :-1]) * u[:-1]
    relative = np.linalg.norm(residual - b) / max(np.linalg.norm(b), 1e-300)
    if not np.all(np.isfinite(u)) or relative > 1e-10:
        raise NumericalError("resolvent solve inaccurate", lam=complex(lam), mode=mode, residual=float(relative))
    return u


def resolvent_norm(disc: Discretization, lam: complex, modes: Optional[list] = None) -> float:
    """||(A_h - lambda)^{-1}|| in the weighted L^2 norm: 1 / dist(lambda, spec) for the symmetric pencil."""
    modes = disc.modes if modes is None else modes
    distance = np.inf
    for m in modes:
        values = disc.eigenvalues(m)
        distance = min(distance, float(np.min(np.abs(values - lam))))
    if distance == 0:
        raise NumericalError("lambda lies on the discrete spectrum", lam=complex(lam))
    return 1.0 / distance


def kappa_homogeneity_deviation(disc: Discretization, lam_moduli, arg: float = np.pi) -> pd.DataFrame:
    """Relative deviation of ||(A - lambda)^{-1}|| from |lambda|^{-1} ||(A - lambda/|lambda|)^{-1}||."""
    unit = resolvent_norm(disc, np.exp(1j * arg))
    rows = []
    for modulus in lam_moduli:
        direct = resolvent_norm(disc, modulus * np.exp(1j * arg))
        scaled = unit / modulus
        rows.append({"lam_abs": modulus, "norm": direct, "scaled_norm": scaled,
                     "deviation": abs(direct - scaled) / scaled})
    return pd.DataFrame(rows)


@dataclass
class EllipticityReport:
    symbol_ok: bool
    model_ok: Verdict
    clean_weight_line: bool
    details: pd.DataFrame = field(default_factory=pd.DataFrame)

    @property
    def verdict(self) -> Verdict:
        if not (self.symbol_ok and self.clean_weight_line) or self.model_ok == Verdict.FAIL:
            return Verdict.FAIL
        return self.model_ok


def _half_line_solution(op: ConeOperator, m: int, lam: complex, npoints: int) -> np.ndarray:
    h = (MODEL_S_MAX - MODEL_S_MIN) / (npoints + 1)
    s = MODEL_S_MIN + h * np.arange(1, npoints + 1)
    c2 = op.indicial_coefficients(m)[2].real
    weight = np.exp(op.mu * s)
    main = 2.0 * c2 / h ** 2 + op.indicial_coefficients(m)[0].real
    off = np.full(npoints - 1, -c2 / h ** 2)
    ab = _banded(np.full(npoints, main), off, lam * weight)
    bump = np.exp(-((s + 7.0) / 0.5) ** 2)
    return solve_banded((1, 1), ab, weight * bump)


def _model_solve_converges(op: ConeOperator, m: int, lam: complex) -> Optional[float]:
    """Ratio of successive refinement differences, or None when a solve breaks down."""
    solutions = []
    for level in range(3):
        npoints = (MODEL_BASE_POINTS + 1) * 2 ** level - 1
        try:
            u = _half_line_solution(op, m, lam, npoints)
        except (LinAlgError, ValueError):
            return None
        if not np.all(np.isfinite(u)):
            return None
        solutions.append(u)
    coarse, middle, fine = solutions
    # nested grids: point i of one level sits at point 2i+1 of the next
    d1 = np.max(np.abs(coarse - middle[1::2]))
    d2 = np.max(np.abs(middle - fine[1::2]))
    if d1 == 0:
        return 0.0
    return float(d2 / d1)


def check_parameter_ellipticity(op: ConeOperator, sector: Sector, alpha: Optional[float] = None,
                                grid: Optional[SymbolGrid] = None) -> EllipticityReport:
    """
    Parameter-ellipticity of A - lambda on the sector with respect to the weight alpha.

    symbol_ok: c_2 xi^2 + c_0(m) avoids the sector for sampled xi != 0 and all modes.
    clean_weight_line: no boundary-spectrum point on Im sigma = -alpha.
    model_ok: the frozen half-line problems are uniquely solvable for |lambda| in
    {1e2, 1e4} on the sector rays, judged by convergence under refinement; a
    solve that does not settle gives UNDECIDED.
    """
    if op.x_perturbation is not None:
        raise ConfigurationError("model check expects the frozen operator", operator=op.name)
    alpha = op.alpha if alpha is None else alpha
    grid = grid or SymbolGrid(points_per_decade=10)

    xi = grid.xi_values()
    xi = xi[xi != 0]
    symbol_ok = True
    for m in op.modes:
        c = op.indicial_coefficients(m)
        values = c[2] * xi ** 2 + c[0]
        if np.any(np.asarray(sector.contains(values))):
            symbol_ok = False
            break

    spectrum = boundary_spectrum(op, strip=abs(alpha) + 1.0)
    clean_weight_line = all(abs(sigma.imag + alpha) > 1e-9 for sigma, _, _ in spectrum.poles)

    rows = []
    model_ok = Verdict.PASS
    if not op.is_symmetric_second_order():
        model_ok = Verdict.UNDECIDED
    else:
        for m in op.modes:
            for theta in sector.rays():
                for modulus in MODEL_LAMBDA_MODULI:
                    lam = modulus * np.exp(1j * theta)
                    ratio = _model_solve_converges(op, m, lam)
                    settled = ratio is not None and ratio <= 0.5
                    rows.append({"mode": m, "arg": theta, "lam_abs": modulus,
                                 "refinement_ratio": np.nan if ratio is None else ratio,
                                 "settled": settled})
                    if not settled:
                        model_ok = Verdict.UNDECIDED
    if not clean_weight_line:
        model_ok = Verdict.FAIL

    report = EllipticityReport(symbol_ok=symbol_ok, model_ok=model_ok,
                               clean_weight_line=clean_weight_line, details=pd.DataFrame(rows))
    logger.info("parameter ellipticity of %s: symbol_ok=%s model_ok=%s clean_weight_line=%s",
                op.name, symbol_ok, model_ok.value, clean_weight_line)
    return report
