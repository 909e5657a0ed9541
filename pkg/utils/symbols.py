import logging
from dataclasses import dataclass, field, replace
from itertools import product
from math import comb
from typing import Callable, Optional

import numpy as np
import pandas as pd

from utils.errors import ConfigurationError, NumericalError, ValidationError, Verdict

logger = logging.getLogger(__name__)

# First-derivative finite-difference step relative to max(1, |xi|); order-k
# stencils use FD_BASE_STEP ** (3 / (k + 2)) to balance truncation and roundoff.
FD_BASE_STEP = 1e-5
REFINEMENT_GROWTH = 1.10
SLOPE_XI_MIN = 10.0
SCALING_LIMIT_TOL = 1e-5


@dataclass(frozen=True)
class Sector:
    """Closed sector {arg_min <= arg(lambda) <= arg_max}, optionally with the origin."""
    arg_min: float
    arg_max: float
    contains_origin: bool = True

    def __post_init__(self):
        width = self.arg_max - self.arg_min
        if width < 0 or width > 2 * np.pi + 1e-12:
            raise ConfigurationError("sector opening must lie in [0, 2pi]",
                                     arg_min=self.arg_min, arg_max=self.arg_max)

    def contains(self, lam, tol: float = 1e-12):
        lam = np.asarray(lam, dtype=complex)
        width = self.arg_max - self.arg_min
        offset = np.mod(np.angle(lam) - self.arg_min, 2 * np.pi)
        inside = (offset <= width + tol) | (offset >= 2 * np.pi - tol)
        inside = np.where(np.abs(lam) == 0, self.contains_origin, inside)
        return bool(inside) if inside.ndim == 0 else inside

    def rays(self, count: int = 3) -> np.ndarray:
        if count == 1 or self.arg_max == self.arg_min:
            return np.array([0.5 * (self.arg_min + self.arg_max)])
        return np.linspace(self.arg_min, self.arg_max, count)


LEFT_HALF_PLANE = Sector(np.pi / 2, 3 * np.pi / 2)


@dataclass(frozen=True)
class HomogeneousFunction:
    """f(xi) homogeneous of the given degree in xi (for xi != 0)."""
    func: Callable
    degree: float
    derivative: Optional[Callable] = None
    name: str = "f"

    def __call__(self, xi):
        return self.func(np.asarray(xi, dtype=float))


def abs_power(k: float, coefficient: float = 1.0) -> HomogeneousFunction:
    return HomogeneousFunction(
        func=lambda xi: coefficient * np.abs(xi) ** k,
        degree=k,
        derivative=lambda xi: coefficient * k * np.sign(xi) * np.abs(xi) ** (k - 1) if k != 0
        else np.zeros_like(xi),
        name=f"{coefficient}|xi|^{k}",
    )


def smooth_step(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    s = np.asarray(s, dtype=float)
    left = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
    right = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return left / (left + right)


def _smooth_step_derivative(s):
    s = np.asarray(s, dtype=float)
    inside = (s > 0) & (s < 1)
    safe = np.where(inside, s, 0.5)
    f_left = np.exp(-1.0 / safe)
    f_right = np.exp(-1.0 / (1.0 - safe))
    d_left = f_left / safe ** 2
    d_right = f_right / (1.0 - safe) ** 2
    value = (d_left * f_right + f_left * d_right) / (f_left + f_right) ** 2
    return np.where(inside, value, 0.0)


def excision(xi, radius: float):
    """chi(xi): 0 for |xi| <= radius/2, 1 for |xi| >= radius."""
    half = 0.5 * radius
    return smooth_step((np.abs(xi) - half) / half)


def excision_derivative(xi, radius: float):
    half = 0.5 * radius
    return _smooth_step_derivative((np.abs(xi) - half) / half) * np.sign(xi) / half


@dataclass
class ParamSymbol:
    """
    Closed-form parameter-dependent symbol a(xi, lambda) with declared orders
    (mu, p, d). component_builder(j) returns the closed form of the j-th
    homogeneous component (without excision) when the constructor knows it.
    """
    func: Callable
    mu: float
    p: float
    d: float
    n: int = 1
    cutoff_radius: float = 1.0
    sector: Optional[Sector] = None
    component_builder: Optional[Callable] = None
    gradient: Optional[Callable] = None
    name: str = "symbol"

    def __call__(self, xi, lam):
        return self.func(np.asarray(xi, dtype=float), np.asarray(lam, dtype=complex))

    @property
    def orders(self):
        return (self.mu, self.p, self.d)

    def with_orders(self, mu: float, p: Optional[float] = None, d: Optional[float] = None) -> "ParamSymbol":
        return replace(self, mu=mu, p=self.p if p is None else p, d=self.d if d is None else d)


def zero_symbol(mu: float, p: float, d: float) -> ParamSymbol:
    return ParamSymbol(func=lambda xi, lam: np.zeros(np.broadcast(xi, lam).shape, dtype=complex),
                       mu=mu, p=p, d=d, name="zero")


@dataclass(frozen=True)
class SymbolGrid:
    """Geometric sampling grid in |xi| and |lambda|^{1/d} along sector rays."""
    points_per_decade: int = 40
    xi_min: float = 1e-2
    xi_max: float = 1e3
    lam_root_min: float = 1.0
    lam_root_max: float = 1e3
    ray_count: int = 3

    def xi_values(self) -> np.ndarray:
        count = int(round(np.log10(self.xi_max / self.xi_min) * self.points_per_decade)) + 1
        positive = np.geomspace(self.xi_min, self.xi_max, count)
        return np.concatenate([-positive[::-1], [0.0], positive])

    def lam_roots(self) -> np.ndarray:
        count = int(round(np.log10(self.lam_root_max / self.lam_root_min) * self.points_per_decade)) + 1
        return np.geomspace(self.lam_root_min, self.lam_root_max, count)

    def refined(self) -> "SymbolGrid":
        # twice the density and one more decade of reach in both variables
        return replace(self, points_per_decade=2 * self.points_per_decade,
                       xi_max=10 * self.xi_max, lam_root_max=10 * self.lam_root_max)


def _central_stencil(order: int):
    """Offsets (in units of h) and weights of the central difference of the given order."""
    if order == 0:
        return [(0.0, 1.0)]
    return [(order / 2.0 - i, (-1) ** i * comb(order, i)) for i in range(order + 1)]


def _mixed_derivative(s: ParamSymbol, xi, lam_mod, theta, alpha: int, beta: int):
    scale = FD_BASE_STEP ** (3.0 / (alpha + beta + 2))
    h_xi = scale * np.maximum(1.0, np.abs(xi))
    h_lam = scale * (1.0 + np.abs(xi) + lam_mod ** (1.0 / s.d)) ** s.d
    direction = np.exp(1j * theta)
    lam = lam_mod * direction

    total = 0.0
    for xi_offset, xi_weight in _central_stencil(alpha):
        for lam_offset, lam_weight in _central_stencil(beta):
            values = s(xi + xi_offset * h_xi, lam + lam_offset * h_lam * direction)
            total = total + xi_weight * lam_weight * values
    return total / (h_xi ** alpha * (h_lam * direction) ** beta)


def _class_bound(s: ParamSymbol, xi, lam_mod, alpha: int, beta: int):
    return ((1.0 + np.abs(xi)) ** (s.mu - s.p - alpha)
            * (1.0 + np.abs(xi) + lam_mod ** (1.0 / s.d)) ** (s.p - s.d * beta))


def _sector_for(s: ParamSymbol) -> Sector:
    return s.sector if s.sector is not None else LEFT_HALF_PLANE


def _ratio_table(s: ParamSymbol, grid: SymbolGrid, max_alpha: int, max_beta: int) -> dict:
    xi = grid.xi_values()[:, None, None]
    lam_mod = (grid.lam_roots() ** s.d)[None, :, None]
    theta = _sector_for(s).rays(grid.ray_count)[None, None, :]

    values = s(xi, lam_mod * np.exp(1j * theta))
    if not np.all(np.isfinite(values)):
        i, j, r = np.argwhere(~np.isfinite(values))[0]
        raise ValidationError("symbol evaluator returned a non-finite value",
                              xi=float(xi[i, 0, 0]), lam=complex(lam_mod[0, j, 0] * np.exp(1j * theta[0, 0, r])))

    ratios = {}
    for alpha in range(max_alpha + 1):
        for beta in range(max_beta + 1):
            derivative = _mixed_derivative(s, xi, lam_mod, theta, alpha, beta)
            ratios[(alpha, beta)] = np.abs(derivative) / _class_bound(s, xi, lam_mod, alpha, beta)
    return ratios


def _growth_slope(xi_values: np.ndarray, ratio: np.ndarray) -> float:
    per_xi = ratio.max(axis=(1, 2))
    mask = (xi_values >= SLOPE_XI_MIN) & (per_xi > 0)
    if mask.sum() < 3:
        return 0.0
    slope, _ = np.polyfit(np.log1p(xi_values[mask]), np.log(per_xi[mask]), 1)
    return float(slope)


@dataclass
class SeminormReport:
    table: pd.DataFrame

    @property
    def passed(self) -> bool:
        return bool(self.table["pass"].all())

    @property
    def verdict(self) -> Verdict:
        return Verdict.PASS if self.passed else Verdict.FAIL


def seminorm_check(s: ParamSymbol, max_alpha: int = 2, max_beta: int = 2,
                   grid: Optional[SymbolGrid] = None) -> SeminormReport:
    """
    Sampled seminorms of s against the S^{mu,p,d} bound.

    For each (alpha, beta) the sup over the grid of
        |d_xi^alpha d_lambda^beta s| / ((1+|xi|)^{mu-p-alpha} (1+|xi|+|lambda|^{1/d})^{p-d beta})
    is compared with the sup over the refined grid. A row passes when both sups
    are finite and refinement grows the sup by at most 10%; this is a numerical
    proxy for boundedness.
    """
    grid = grid or SymbolGrid()
    coarse = _ratio_table(s, grid, max_alpha, max_beta)
    fine = _ratio_table(s, grid.refined(), max_alpha, max_beta)
    xi_values = grid.xi_values()

    rows = []
    for (alpha, beta), ratio in coarse.items():
        worst = float(ratio.max())
        refined = float(fine[(alpha, beta)].max())
        ok = bool(np.isfinite(worst) and np.isfinite(refined)
                  and refined <= REFINEMENT_GROWTH * worst + 1e-300)
        rows.append({
            "alpha": alpha,
            "beta": beta,
            "worst_ratio": worst,
            "grid_refined_ratio": refined,
            "growth_slope": _growth_slope(xi_values, ratio),
            "pass": ok,
        })
    table = pd.DataFrame(rows)
    logger.info("seminorm check of %s at orders %s: %s", s.name, s.orders,
                "PASS" if table["pass"].all() else "FAIL")
    return SeminormReport(table=table)


def regularity_check(s: ParamSymbol, xi_values=(0.5, 1.0, 4.0), tol: float = 1e-6) -> Verdict:
    """
    r-subclass check: z^{p/d} a(xi, 1/z) stays finite and converges as z -> 0
    along every sector ray.
    """
    ratio = s.p / s.d
    if abs(ratio - round(ratio)) > 1e-12:
        raise ConfigurationError("regularity subclass needs p/d integral", p=s.p, d=s.d)
    z_mod = np.geomspace(1e-10, 1.0, 41)
    for theta in _sector_for(s).rays():
        z = z_mod * np.exp(-1j * theta)
        for xi in xi_values:
            values = z ** int(round(ratio)) * s(xi, 1.0 / z)
            if not np.all(np.isfinite(values)):
                return Verdict.FAIL
            if abs(values[0] - values[1]) > tol * max(1.0, abs(values[0])):
                return Verdict.FAIL
    return Verdict.PASS


@dataclass
class HomogComponent:
    """
    a_{mu-j}: anisotropic homogeneous of the given degree,
        a(delta xi, delta^d lambda) = delta^degree a(xi, lambda).
    Evaluated on the slice |xi| = 1 and extended by homogeneity.
    """
    degree: float
    d: float
    slice_eval: Callable
    j: int = 0

    def __call__(self, xi, lam):
        xi = np.asarray(xi, dtype=float)
        lam = np.asarray(lam, dtype=complex)
        rho = np.abs(xi)
        safe = np.where(rho > 0, rho, 1.0)
        value = safe ** self.degree * self.slice_eval(np.sign(np.where(rho > 0, xi, 1.0)), lam / safe ** self.d)
        return np.where(rho > 0, value, 0.0)


def _scaling_limit(s: ParamSymbol, j: int, lower: list, xi_hat, lam, levels: int = 8):
    """
    Richardson extrapolation of delta^{j-mu} [s(delta xi, delta^d lam) - sum_{i<j} delta^{mu-i} a_i]
    as delta -> infinity; returns (limit, change between the last two levels).
    """
    delta0 = 4.0 * s.cutoff_radius
    table = []
    for level in range(levels):
        delta = delta0 * 2.0 ** level
        value = s(delta * xi_hat, delta ** s.d * lam)
        for i, component in enumerate(lower):
            value = value - delta ** (s.mu - i) * component(xi_hat, lam)
        table.append(delta ** (j - s.mu) * value)

    # Richardson in h = 1/delta with ratio 2
    columns = [np.asarray(table)]
    for m in range(1, levels):
        previous = columns[-1]
        columns.append((2.0 ** m * previous[1:] - previous[:-1]) / (2.0 ** m - 1.0))
    best = columns[-1][0]
    change = np.abs(columns[-1][0] - columns[-2][-1])
    return best, change


def homog_expand(s: ParamSymbol, N: int, check_points: int = 6):
    """
    Split s into homogeneous components a_mu, ..., a_{mu-N+1} and a remainder.

    Returns:
        (list of HomogComponent, remainder ParamSymbol of orders (mu - N, p, d))
    """
    if N < 0:
        raise ConfigurationError("expansion length must be nonnegative", N=N)
    if N == 0:
        return [], s

    rays = _sector_for(s).rays()
    probe_lam = np.concatenate([m * np.exp(1j * rays) for m in (0.5, 2.0)])[:check_points]
    probe_xi = np.array([1.0, -1.0])[:, None]

    components = []
    reference = None
    for j in range(N):
        if s.component_builder is not None:
            closed_form = s.component_builder(j)
            component = HomogComponent(degree=s.mu - j, d=s.d, slice_eval=closed_form, j=j)
            limit, change = _scaling_limit(s, j, components, probe_xi, probe_lam[None, :])
            if reference is None:
                reference = max(float(np.max(np.abs(limit))), 1e-14)
            mismatch = np.abs(limit - closed_form(probe_xi, probe_lam[None, :]))
            scale = reference
            if np.max(mismatch / scale) > 1e3 * SCALING_LIMIT_TOL:
                raise ValidationError("closed-form component disagrees with its scaling limit", symbol=s.name,
                                      component=j, relative_mismatch=float(np.max(mismatch / scale)))
        else:
            limit, change = _scaling_limit(s, j, components, probe_xi, probe_lam[None, :])
            if reference is None:
                reference = max(float(np.max(np.abs(limit))), 1e-14)
            scale = reference
            if not np.all(np.isfinite(change)) or np.max(change / scale) > SCALING_LIMIT_TOL:
                raise NumericalError("scaling limit does not converge; symbol is not classical",
                                     symbol=s.name, component=j, change=float(np.max(change)))
            frozen = list(components)

            def numeric_slice(xi_hat, lam, j=j, frozen=frozen):
                value, _change = _scaling_limit(s, j, frozen, xi_hat, lam)
                return value

            component = HomogComponent(degree=s.mu - j, d=s.d, slice_eval=numeric_slice, j=j)
        components.append(component)

    def remainder(xi, lam, components=tuple(components)):
        chi = excision(xi, s.cutoff_radius)
        total = s(xi, lam)
        for component in components:
            total = total - chi * component(xi, lam)
        return total

    rest = ParamSymbol(func=remainder, mu=s.mu - N, p=s.p, d=s.d, n=s.n,
                       cutoff_radius=s.cutoff_radius, sector=s.sector,
                       name=f"{s.name}-r{N}")
    return components, rest


def _binomial_negative(ell: int, k: int) -> float:
    # C(-ell, k)
    return (-1) ** k * comb(ell + k - 1, k)


def _resolvent_component_builder(a_mu: HomogeneousFunction, lower: tuple, b: HomogeneousFunction,
                                 ell: int, lam_scale: float):
    """j-th component of b (a_mu + sum(lower) - lam_scale * lam)^{-ell} by binomial expansion."""
    shifts = [a_mu.degree - term.degree for term in lower]

    def builder(j: int):
        def evaluate(xi, lam):
            base = a_mu(xi) - lam_scale * lam
            if j == 0:
                return b(xi) * base ** (-ell)
            total = 0.0
            for k in range(1, j + 1):
                coefficient = _binomial_negative(ell, k)
                for picks in product(range(len(lower)), repeat=k):
                    if abs(sum(shifts[i] for i in picks) - j) > 1e-12:
                        continue
                    term = coefficient * b(xi) * base ** (-ell - k)
                    for i in picks:
                        term = term * lower[i](xi)
                    total = total + term
            return total * np.ones(np.broadcast(xi, lam).shape)
        return evaluate

    return builder


def _check_unit_sphere(a_mu: HomogeneousFunction, sector: Sector, scale: float = 1.0):
    for xi in (-1.0, 1.0):
        value = complex(a_mu(np.array(xi)))
        if sector.contains(value / scale):
            raise ValidationError("principal symbol takes values in the sector",
                                  witness_xi=xi, value=value)


def resolvent_symbol(a_mu: HomogeneousFunction, b: HomogeneousFunction, ell: int, sector: Sector,
                     lower: tuple = (), cutoff_radius: float = 1.0) -> ParamSymbol:
    """
    chi(xi) b(xi) (a(xi) - lambda)^{-ell} with a = a_mu + lower-order terms.
    Declared orders: (deg b - ell deg a_mu, -ell deg a_mu, deg a_mu).
    """
    if ell < 1:
        raise ConfigurationError("resolvent power must be positive", ell=ell)
    _check_unit_sphere(a_mu, sector)
    lower = tuple(lower)

    def full_a(xi):
        value = a_mu(xi)
        for term in lower:
            value = value + term(xi)
        return value

    def func(xi, lam):
        return excision(xi, cutoff_radius) * b(xi) * (full_a(xi) - lam) ** (-ell)

    gradient = None
    derivatives = [a_mu.derivative, b.derivative] + [term.derivative for term in lower]
    if all(derivative is not None for derivative in derivatives):
        def gradient(xi, lam):
            xi = np.asarray(xi, dtype=float)
            lam = np.asarray(lam, dtype=complex)
            base = full_a(xi) - lam
            a_prime = a_mu.derivative(xi) + sum(term.derivative(xi) for term in lower)
            chi = excision(xi, cutoff_radius)
            d_xi = (excision_derivative(xi, cutoff_radius) * b(xi) * base ** (-ell)
                    + chi * b.derivative(xi) * base ** (-ell)
                    - ell * chi * b(xi) * a_prime * base ** (-ell - 1))
            d_lam = ell * chi * b(xi) * base ** (-ell - 1)
            return d_xi, d_lam

    mu_a = a_mu.degree
    return ParamSymbol(
        func=func,
        mu=b.degree - ell * mu_a,
        p=-ell * mu_a,
        d=mu_a,
        cutoff_radius=cutoff_radius,
        sector=sector,
        component_builder=_resolvent_component_builder(a_mu, lower, b, ell, 1.0),
        gradient=gradient,
        name=f"({b.name})({a_mu.name}-lambda)^-{ell}",
    )


def parametrix_leading(a_mu: HomogeneousFunction, mu: float, sector: Sector, eps: float,
                       x: float = 1.0, lower: tuple = (), grid: Optional[SymbolGrid] = None) -> ParamSymbol:
    """
    Leading parametrix symbol b_{-mu} = chi_eps(xi) (a(xi) - x^mu lambda)^{-1}.

    a = a_mu + lower is the frozen principal symbol of one Fourier mode, e.g.
    xi^2 + m^2 + c. Invertibility of a(xi) - x^mu lambda is checked on the
    sampled slice |xi| >= eps/2.
    """
    grid = grid or SymbolGrid(points_per_decade=10)
    lower = tuple(lower)

    def full_a(xi):
        value = a_mu(xi)
        for term in lower:
            value = value + term(xi)
        return value

    xi = grid.xi_values()
    xi = xi[np.abs(xi) >= 0.5 * eps]
    values = full_a(xi)
    inside = sector.contains(values.astype(complex))
    if np.any(inside):
        witness = int(np.argmax(inside))
        raise ValidationError("a(xi) - x^mu lambda is not invertible on the sector",
                              witness_xi=float(xi[witness]), value=complex(values[witness]))

    scale = x ** mu

    def func(xi, lam):
        return excision(xi, eps) / (full_a(xi) - scale * lam)

    return ParamSymbol(
        func=func,
        mu=-mu,
        p=-mu,
        d=mu,
        cutoff_radius=eps,
        sector=sector,
        component_builder=_resolvent_component_builder(a_mu, lower, abs_power(0.0), 1, scale),
        name=f"b_-{mu}",
    )


def neumann_refine(b0: ParamSymbol, s0: ParamSymbol, steps: int) -> ParamSymbol:
    """b0 (1 + s0 + ... + s0^steps); pointwise product, no derivative corrections."""
    if steps < 1:
        raise ConfigurationError("Neumann refinement needs at least one step", steps=steps)

    def func(xi, lam):
        correction = s0(xi, lam)
        total = 1.0 + 0.0 * correction
        power = 1.0
        for _ in range(steps):
            power = power * correction
            total = total + power
        return b0(xi, lam) * total

    return replace(b0, func=func, component_builder=None, gradient=None,
                   name=f"{b0.name}-neumann{steps}")


def neumann_error(s0: ParamSymbol, steps: int) -> ParamSymbol:
    """Error symbol s0^{steps+1} left after `steps` Neumann refinements."""
    if steps < 1:
        raise ConfigurationError("Neumann refinement needs at least one step", steps=steps)
    return ParamSymbol(func=lambda xi, lam: s0(xi, lam) ** (steps + 1),
                       mu=s0.mu * (steps + 1), p=s0.p, d=s0.d,
                       cutoff_radius=s0.cutoff_radius, sector=s0.sector,
                       name=f"{s0.name}^{steps + 1}")


def derivative_consistency(s: ParamSymbol, xi, lam) -> float:
    """Worst relative gap between finite-difference and analytic first derivatives."""
    if s.gradient is None:
        raise ConfigurationError("symbol carries no analytic gradient", symbol=s.name)
    xi = np.asarray(xi, dtype=float)
    lam = np.asarray(lam, dtype=complex)
    lam_mod = np.abs(lam)
    theta = np.angle(lam)
    d_xi, d_lam = s.gradient(xi, lam)
    fd_xi = _mixed_derivative(s, xi, lam_mod, theta, 1, 0)
    fd_lam = _mixed_derivative(s, xi, lam_mod, theta, 0, 1)
    gap_xi = np.abs(fd_xi - d_xi) / np.maximum(np.abs(d_xi), 1e-300)
    gap_lam = np.abs(fd_lam - d_lam) / np.maximum(np.abs(d_lam), 1e-300)
    return float(max(gap_xi.max(), gap_lam.max()))
