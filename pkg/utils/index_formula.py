import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import pandas as pd
from scipy.integrate import quad
from scipy.linalg import eigh, eigvalsh_tridiagonal, svdvals

from utils.asymptotics import fit_expansion, predict_terms, term_columns
from utils.coneop import ConeOperator, Discretization, boundary_spectrum, discretize
from utils.errors import ConfigurationError, NumericalError, ValidationError, Verdict
from utils.traces import TraceSeries, tip_cutoff

logger = logging.getLogger(__name__)

KERNEL_THRESHOLD = 1e-8
AMBIGUITY_GUARD = 10.0

OMEGA_T_GRID = (1e-2, 1.0)
OMEGA_SAMPLES = 40
OMEGA_K_MAX = 2

ETA_R_MAX = 1e4
ETA_CORE = 10.0
LINE_SAMPLES = 2001
DECAY_PROBES = (1e2, 1e3, 1e4)
WINDING_BOX = 200.0
WINDING_SAMPLES = 8000

RED_TO_CONST_TAUS = tuple(2.0 ** -k for k in range(2, 9))
RED_TO_CONST_POINTS = 400
SLOPE_MARGIN = 0.1

LONG_DOMAIN = 3
EDGE_FRACTION = 0.1
NULL_CANDIDATES = 4
NULL_RATIO = 0.1
STABLE_RATIO = 0.5


def kernel_dimensions(matrix: np.ndarray, threshold: float = KERNEL_THRESHOLD,
                      guard: float = AMBIGUITY_GUARD) -> dict:
    """
    Discrete kernel and cokernel dimensions of a (possibly rectangular) matrix.

    A singular value counts as zero below threshold * s_max; any singular value
    within a factor `guard` of that cut makes the count ambiguous.
    """
    matrix = np.atleast_2d(np.asarray(matrix))
    return _count_dimensions(svdvals(matrix), matrix.shape, threshold, guard)


def _count_dimensions(s: np.ndarray, shape: tuple, threshold: float = KERNEL_THRESHOLD,
                      guard: float = AMBIGUITY_GUARD) -> dict:
    rows, cols = shape
    scale = float(s.max()) if len(s) else 0.0
    if scale == 0:
        return {"kernel": cols, "cokernel": rows, "ambiguous": False, "smallest": 0.0}
    relative = s / scale
    rank = int(np.sum(relative >= threshold))
    ambiguous = bool(np.any((relative > threshold / guard) & (relative < threshold * guard)))
    return {"kernel": cols - rank, "cokernel": rows - rank, "ambiguous": ambiguous,
            "smallest": float(relative.min())}


def _singular_blocks(B: Union[np.ndarray, Discretization]) -> list:
    """(singular values, rows, cols) per block of a realization."""
    if isinstance(B, Discretization):
        blocks = []
        for m in B.modes:
            d, e = B.scaled_bands(m)
            s = np.abs(eigvalsh_tridiagonal(d, e))
            blocks.append((s, len(d), len(d)))
        return blocks
    matrix = np.atleast_2d(np.asarray(B))
    return [(svdvals(matrix), matrix.shape[0], matrix.shape[1])]


def mckean_singer(B: Union[np.ndarray, Discretization], t_list) -> np.ndarray:
    """Tr e^{-t B*B} - Tr e^{-t BB*} per t, from the singular values padded with zeros."""
    t_list = np.asarray(t_list, dtype=float)
    total = np.zeros(len(t_list))
    for s, rows, cols in _singular_blocks(B):
        right = np.concatenate([s, np.zeros(cols - len(s))])
        left = np.concatenate([s, np.zeros(rows - len(s))])
        total += np.exp(-np.outer(t_list, right ** 2)).sum(axis=1) - np.exp(-np.outer(t_list, left ** 2)).sum(axis=1)
    return total


@dataclass
class OmegaResult:
    value: float
    verdict: Verdict
    flags: list = field(default_factory=list)
    kernel_gap: Optional[int] = None


def omega_constant(B: Union[np.ndarray, Discretization], t_grid=None, window: Optional[tuple] = None,
                   mu: float = 2.0, n: int = 2) -> OmegaResult:
    """
    Constant term of the heat-trace difference Tr e^{-tB*B} - Tr e^{-tBB*}.

    The difference is fitted against the heat lattice; the (0, 0) coefficient is
    returned and detected log terms at t^0 are flagged.
    """
    if isinstance(B, Discretization):
        strip = B.op.mu / 2.0
        inside = [sigma for sigma, _, _ in boundary_spectrum(B.op, strip).poles if abs(sigma.imag) < strip]
        if inside:
            raise ValidationError("realization has boundary spectrum in the strip", poles=inside, strip=strip)
        mu, n = B.op.mu, B.op.n
    if t_grid is None:
        t_grid = np.geomspace(*OMEGA_T_GRID, OMEGA_SAMPLES)
    t_grid = np.asarray(t_grid, dtype=float)

    difference = mckean_singer(B, t_grid)
    gap = None
    if not isinstance(B, Discretization):
        dims = kernel_dimensions(np.atleast_2d(np.asarray(B)))
        gap = dims["kernel"] - dims["cokernel"]

    if np.all(difference == 0):
        return OmegaResult(value=0.0, verdict=Verdict.PASS, kernel_gap=gap)

    series = TraceSeries(param=t_grid, values=difference, tail_bound=np.zeros(len(t_grid)),
                         meta={"kind": "heat-difference", "mu": mu, "n": n})
    terms = term_columns(predict_terms(series.meta, "heat", OMEGA_K_MAX))
    expansion = fit_expansion(series, terms, window=window)
    flags = [f"log{j}_at_zero" for j in (1, 2) if expansion.is_detected(0.0, j)]
    verdict = Verdict.PASS if expansion.is_detected(0.0, 0) else Verdict.UNDECIDED
    value = float(np.real(expansion.coefficient(0.0, 0)))
    logger.info("omega = %.10g (%s, flags=%s)", value, verdict.value, flags)
    return OmegaResult(value=value, verdict=verdict, flags=flags, kernel_gap=gap)


@dataclass
class MellinPerturbation:
    """
    Finite-rank Mellin symbol H(sigma) with derivative, integrated on Im sigma = -mu/2.
    `decay` bounds |H(sigma)| |Re sigma|^2 far out on the line.
    """
    h_hat: Callable
    h_prime: Callable
    mu: float = 2.0
    decay: float = 1.0
    rank: int = 1
    name: str = "H"

    def __post_init__(self):
        for s in DECAY_PROBES:
            size = np.linalg.norm(np.atleast_2d(self.h_hat(self.on_line(s))), 2)
            if size * s ** 2 > 2.0 * self.decay:
                raise ConfigurationError("Mellin symbol does not decay like |Re sigma|^-2",
                                         probe=s, scaled_norm=size * s ** 2, decay=self.decay)

    @property
    def weight(self) -> float:
        return self.mu / 2.0

    def on_line(self, s) -> complex:
        return complex(s) - 1j * self.weight

    def log_det_derivative(self, sigma: complex) -> complex:
        """Tr(H'(sigma) (1 + H(sigma))^{-1})."""
        h = np.atleast_2d(self.h_hat(sigma))
        system = np.eye(h.shape[0]) + h
        return complex(np.trace(np.linalg.solve(system, np.atleast_2d(self.h_prime(sigma)))))

    def determinant(self, sigma: complex) -> complex:
        h = np.atleast_2d(self.h_hat(sigma))
        return complex(np.linalg.det(np.eye(h.shape[0]) + h))


def zero_perturbation(mu: float = 2.0, rank: int = 1) -> MellinPerturbation:
    return MellinPerturbation(h_hat=lambda sigma: np.zeros((rank, rank)), h_prime=lambda sigma: np.zeros((rank, rank)),
                              mu=mu, decay=1.0, rank=rank, name="zero")


def rational_perturbation(c: complex, w1: complex, w2: complex, mu: float = 2.0) -> MellinPerturbation:
    """Rank one H(sigma) = c / ((sigma - w1)(sigma - w2))."""
    def h_hat(sigma):
        return np.array([[c / ((sigma - w1) * (sigma - w2))]])

    def h_prime(sigma):
        return np.array([[-c * (2.0 * sigma - w1 - w2) / ((sigma - w1) * (sigma - w2)) ** 2]])

    return MellinPerturbation(h_hat=h_hat, h_prime=h_prime, mu=mu, decay=abs(c), rank=1,
                              name=f"{c}/((s-{w1})(s-{w2}))")


def rank_one_example(c: float = 2.0, b: float = 0.5, mu: float = 2.0) -> MellinPerturbation:
    """H(sigma) = c / (sigma^2 + b^2): poles at +-ib, zeros of 1 + H at +-i sqrt(b^2 + c)."""
    return rational_perturbation(c, 1j * b, -1j * b, mu=mu)


def reflect_across_line(H: MellinPerturbation) -> MellinPerturbation:
    """sigma -> conj(H(conj(sigma) - i mu)): zeros and poles mirrored across Im sigma = -mu/2."""
    def h_hat(sigma):
        return np.conj(np.atleast_2d(H.h_hat(np.conj(sigma) - 1j * H.mu)))

    def h_prime(sigma):
        return np.conj(np.atleast_2d(H.h_prime(np.conj(sigma) - 1j * H.mu)))

    return MellinPerturbation(h_hat=h_hat, h_prime=h_prime, mu=H.mu, decay=H.decay, rank=H.rank,
                              name=f"reflected {H.name}")


def _check_line(H: MellinPerturbation, r_max: float):
    s = np.concatenate([-np.geomspace(r_max, 1e-3, LINE_SAMPLES // 2), [0.0],
                        np.geomspace(1e-3, r_max, LINE_SAMPLES // 2)])
    dets = np.array([H.determinant(H.on_line(x)) for x in s])
    worst = int(np.argmin(np.abs(dets)))
    if abs(dets[worst]) < 1e-10:
        raise ValidationError("1 + H is not invertible on the integration line",
                              witness_sigma=H.on_line(s[worst]), determinant=complex(dets[worst]))


@dataclass
class EtaResult:
    value: float
    tail_bound: float
    imaginary_part: float
    oracle: Optional[int] = None


def eta_term(H: MellinPerturbation, r_max: float = ETA_R_MAX, shift: float = 0.0,
             with_oracle: bool = True) -> EtaResult:
    """
    eta = -(1/2 pi i) int_{Im sigma = -mu/2} Tr(H'(sigma)(1 + H(sigma))^{-1}) d sigma,
    the line run left to right. This equals the number of zeros minus poles of
    det(1 + H) below the line.
    """
    _check_line(H, r_max)

    def part(s, which):
        value = H.log_det_derivative(H.on_line(s))
        return value.real if which == "re" else value.imag

    pieces = [(-r_max + shift, -ETA_CORE + shift), (-ETA_CORE + shift, ETA_CORE + shift),
              (ETA_CORE + shift, r_max + shift)]
    real_total = imag_total = 0.0
    for lo, hi in pieces:
        real_total += quad(part, lo, hi, args=("re",), epsabs=1e-14, epsrel=1e-12, limit=400)[0]
        imag_total += quad(part, lo, hi, args=("im",), epsabs=1e-14, epsrel=1e-12, limit=400)[0]

    # |Tr H'(1+H)^{-1}| <= 2 rank decay / s^3 beyond r_max on both sides
    tail = 2.0 * H.rank * H.decay / r_max ** 2
    value = -imag_total / (2.0 * np.pi)
    imaginary = real_total / (2.0 * np.pi)
    if abs(imaginary) > 1e-6:
        logger.warning("eta integral has imaginary part %.2e; det(1 + H) does not return to 1", imaginary)
    oracle = winding_census(H) if with_oracle else None
    logger.info("eta(%s) = %.12f (tail <= %.1e, oracle %s)", H.name, value, tail, oracle)
    return EtaResult(value=value, tail_bound=tail, imaginary_part=imaginary, oracle=oracle)


def winding_census(H: MellinPerturbation, box: float = WINDING_BOX, samples: int = WINDING_SAMPLES) -> int:
    """Zeros minus poles of det(1 + H) in [-box, box] x [-mu/2 - box, -mu/2], by winding number."""
    top = -H.weight
    bottom = top - box
    edges = [
        (complex(-box, bottom), complex(box, bottom)),
        (complex(box, bottom), complex(box, top)),
        (complex(box, top), complex(-box, top)),
        (complex(-box, top), complex(-box, bottom)),
    ]
    path = np.concatenate([start + (end - start) * np.linspace(0.0, 1.0, samples, endpoint=False)
                           for start, end in edges] + [[edges[0][0]]])
    dets = np.array([H.determinant(sigma) for sigma in path])
    if np.min(np.abs(dets)) < 1e-12:
        raise NumericalError("det(1 + H) vanishes on the census contour", box=box)
    winding = np.unwrap(np.angle(dets))
    return int(round((winding[-1] - winding[0]) / (2.0 * np.pi)))


@dataclass
class Factorization:
    """A = B (1 + H): B a realization without boundary spectrum in the strip, H a Mellin perturbation."""
    B: Union[np.ndarray, Discretization]
    H: MellinPerturbation


@dataclass
class IndexReport:
    omega: float
    eta: float
    index: float
    integer_distance: float
    flags: list
    verdict: Verdict

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{"omega": self.omega, "eta": self.eta, "index": self.index,
                              "integer_distance": self.integer_distance, "flags": ";".join(self.flags),
                              "verdict": self.verdict.value}])


def index_assemble(f: Factorization, t_grid=None) -> IndexReport:
    """Ind A = omega(B, B*) - eta."""
    omega = omega_constant(f.B, t_grid)
    eta = eta_term(f.H)
    flags = list(omega.flags)
    if eta.oracle is not None and abs(eta.value - eta.oracle) > 1e-6:
        flags.append("eta_oracle_mismatch")
    index = omega.value - eta.value
    distance = abs(index - round(index))
    verdict = omega.verdict
    if verdict == Verdict.PASS and distance > 1e-6:
        flags.append("non_integer_index")
        verdict = Verdict.FAIL
    logger.info("index = %.10f (omega %.10f, eta %.10f)", index, omega.value, eta.value)
    return IndexReport(omega=omega.value, eta=eta.value, index=index, integer_distance=distance,
                       flags=flags, verdict=verdict)


@dataclass
class DecayResult:
    table: pd.DataFrame
    slope: float
    verdict: Verdict


def graph_smoothing(disc: Discretization, mode: int = 0) -> np.ndarray:
    """(1 + A^2)^{-1/2} in the eigenbasis of the symmetric scaled matrix, as V diag(...)."""
    d, e = disc.scaled_bands(mode)
    values, vectors = eigh(np.diag(d) + np.diag(e, 1) + np.diag(e, -1))
    return vectors * (1.0 + values ** 2) ** -0.5


def graph_norm_gap(disc: Discretization, tau: float, mode: int = 0, smoothing: Optional[np.ndarray] = None) -> float:
    """
    sup_u ||(A - A_[tau]) u|| / ||u||_A with A_[tau] = phi_tau A_0 + (1 - phi_tau) A,
    i.e. the norm of phi(x/tau) x^{-mu} p(x) (1 + A^2)^{-1/2} on the grid.
    """
    op = disc.op
    if op.x_perturbation is None:
        return 0.0
    x = disc.x_grid
    phi = tip_cutoff()
    multiplier = phi(x / tau) * x ** (-op.mu) * op.x_perturbation(mode, x)
    smoothing = graph_smoothing(disc, mode) if smoothing is None else smoothing
    return float(np.linalg.norm(multiplier[:, None] * smoothing, 2))


def invariance_red_to_const(op: ConeOperator, tau_list=RED_TO_CONST_TAUS, eps: float = 0.1,
                            s_min: float = -12.0, npoints: int = RED_TO_CONST_POINTS, modes=(0,)) -> DecayResult:
    """Decay of ||A - A_[tau]|| in the graph norm as tau -> 0, fitted as a log-log slope."""
    disc = discretize(op, s_min=s_min, npoints=npoints, modes=list(modes))
    x_min = float(disc.x_grid[0])
    smoothing = {m: graph_smoothing(disc, m) for m in modes} if op.x_perturbation is not None else {}
    rows = []
    for tau in tau_list:
        if tau < 10.0 * x_min:
            raise ConfigurationError("tau is not resolved by the grid", tau=tau, x_min=x_min)
        ratio = max(graph_norm_gap(disc, tau, m, smoothing.get(m)) for m in modes)
        rows.append({"tau": tau, "ratio": ratio})
    table = pd.DataFrame(rows)

    if np.all(table["ratio"] == 0):
        return DecayResult(table=table, slope=np.inf, verdict=Verdict.PASS)
    slope = float(np.polyfit(np.log(table["tau"]), np.log(table["ratio"]), 1)[0])
    verdict = Verdict.PASS if slope >= 1.0 - eps - SLOPE_MARGIN else Verdict.FAIL
    logger.info("graph-norm decay slope %.3f (%s)", slope, verdict.value)
    return DecayResult(table=table, slope=slope, verdict=verdict)


def _conjugated_stiffness(disc: Discretization, m: int, shift: float) -> np.ndarray:
    """x^shift K x^-shift: the reduced operator x^mu A on the weight line shifted by `shift`."""
    main, off = disc.bands(m)
    step = np.exp(shift * disc.h)
    return np.diag(main) + np.diag(off / step, 1) + np.diag(off * step, -1)


def _half_line_dimensions(short: Discretization, long: Discretization, m: int, shift: float) -> dict:
    """
    Kernel and cokernel of the half-line realization from two truncations.

    A genuine null vector shows up as a singular value that shrinks
    exponentially with the domain length. It counts toward the kernel when
    its right singular vector stays off the truncation edge at s_min, and
    toward the cokernel when its left singular vector does.
    """
    brief = np.sort(svdvals(_conjugated_stiffness(short, m, shift)))
    U, s, Vt = np.linalg.svd(_conjugated_stiffness(long, m, shift))
    edge = max(1, int(EDGE_FRACTION * len(s)))
    kernel = cokernel = 0
    ambiguous = False
    for i in range(1, min(NULL_CANDIDATES, len(s)) + 1):
        ratio = s[-i] / max(brief[i - 1], 1e-300)
        if ratio > STABLE_RATIO:
            break
        if ratio > NULL_RATIO:
            ambiguous = True
            break
        kernel += int(np.sum(Vt[-i, :edge] ** 2) < 0.5)
        cokernel += int(np.sum(U[:edge, -i] ** 2) < 0.5)
    return {"kernel": kernel, "cokernel": cokernel, "ambiguous": ambiguous, "smallest": float(s[-1])}


def sobolev_verdicts(report: pd.DataFrame) -> pd.DataFrame:
    """
    Compare every row of a sweep with its eps = 0 row. A change in kernel or
    cokernel dimension is a jump; a jump without a crossing pole is a FAIL.
    """
    report = report.copy()
    base = report.loc[report["eps"].idxmin()]
    report["dimension_jump"] = (report["kernel"] != base["kernel"]) | (report["cokernel"] != base["cokernel"])
    verdicts = []
    for _, row in report.iterrows():
        if row["dimension_jump"] and not row["crossing"]:
            verdicts.append(Verdict.FAIL.value)
        elif row["ambiguous"]:
            verdicts.append(Verdict.UNDECIDED.value)
        else:
            verdicts.append(Verdict.PASS.value)
    report["verdict"] = verdicts
    return report


def invariance_red_to_sobolev(op: ConeOperator, eps_list, s_min: float = -12.0, npoints: int = 300,
                              modes=None) -> pd.DataFrame:
    """
    Kernel/cokernel dimensions of the realization on the weight line shifted by eps.

    Per mode the reduced operator x^mu A acts on the half-line s = log x < 0
    conjugated by x^{alpha + eps}; the solution x^{-nu} becomes square
    integrable once alpha + eps passes nu, so the index jumps when the weight
    line crosses a pole of the boundary spectrum. gap is the distance from
    the weight line down to the nearest such pole. The truncated problem is
    solved on [s_min, 0] and on a domain LONG_DOMAIN times longer at the
    same step.
    """
    if any(eps < 0 for eps in eps_list):
        raise ConfigurationError("eps must be nonnegative", eps=min(eps_list))
    short = discretize(op, s_min=s_min, npoints=npoints, modes=modes)
    long = discretize(op, s_min=LONG_DOMAIN * s_min, npoints=LONG_DOMAIN * (npoints + 1) - 1, modes=modes)
    spectrum = boundary_spectrum(op, strip=abs(op.alpha) + 1.0 + max(eps_list))
    below = [-op.alpha - sigma.imag for sigma, _, _ in spectrum.poles if sigma.imag < -op.alpha]
    gap = min(below, default=np.inf)

    rows = []
    for eps in eps_list:
        kernel = cokernel = 0
        ambiguous = False
        for m in short.modes:
            dims = _half_line_dimensions(short, long, m, op.alpha + eps)
            kernel += dims["kernel"]
            cokernel += dims["cokernel"]
            ambiguous = ambiguous or dims["ambiguous"]
        rows.append({"eps": eps, "kernel": kernel, "cokernel": cokernel, "index": kernel - cokernel,
                     "crossing": bool(eps >= gap), "ambiguous": ambiguous, "gap": gap})
    report = sobolev_verdicts(pd.DataFrame(rows))
    logger.info("sobolev sweep over %d eps values, gap %.3g, indices %s", len(eps_list), gap,
                list(report["index"]))
    return report
