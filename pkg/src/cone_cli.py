"""
Experiment runner.

    python -m src.cone_cli <spectrum|heat|resolvent|zeta|index|verify> --config laplace_type.csv

Every subcommand writes CSV files (first line: config digest) and a MANIFEST
into --out. Exit code 0 on success, 2 on errors or FAIL verdicts, 3 when a
verdict is UNDECIDED.
"""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from paths import DATA_DIR
from utils import asymptotics, coneop, index_formula, indexsets, symbols, traces
from utils.errors import ConeToolkitError, Verdict
from utils.experiment_config import ExperimentConfig, load_config
from utils.reporting import Manifest

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("spectrum", "heat", "resolvent", "zeta", "index", "verify")
EXIT_OK, EXIT_FAILED, EXIT_UNDECIDED = 0, 2, 3


def _sector(cfg: ExperimentConfig) -> symbols.Sector:
    return symbols.Sector(cfg.sector[0], cfg.sector[1])


def _weight(cfg: ExperimentConfig):
    if cfg.beta == 0 and cfg.mu_prime == 0:
        return traces.IDENTITY
    return traces.weight_operator(beta=cfg.beta, mellin_order=cfg.mu_prime)


def _heat_spectrum(cfg: ExperimentConfig, op: coneop.ConeOperator) -> traces.SpectralData:
    if op.x_perturbation is None:
        return traces.oracle_spectrum(op, cfg.lambda_cut)
    disc = coneop.discretize(op, s_min=cfg.s_min, npoints=cfg.npoints, s_max=cfg.s_max)
    return traces.spectrum(disc, cfg.eigen_count)


def _fit_terms(cfg: ExperimentConfig, meta: dict, kind: str) -> list:
    return asymptotics.term_columns(asymptotics.predict_terms(meta, kind, cfg.k_max), max_log=cfg.max_log)


def run_spectrum(cfg: ExperimentConfig, manifest: Manifest, svg: bool) -> list:
    op = coneop.from_config(cfg)
    manifest.write_csv(coneop.boundary_spectrum(op, strip=abs(cfg.alpha) + 1.0).to_frame(), "boundary_spectrum.csv")

    disc = coneop.discretize(op, s_min=cfg.s_min, npoints=cfg.npoints, s_max=cfg.s_max)
    data = traces.spectrum(disc, cfg.eigen_count).to_frame()
    verdicts = []
    if op.x_perturbation is None:
        oracle = []
        for m, group in data.groupby("mode"):
            nu = float(np.sqrt(op.indicial_coefficients(m)[0].real))
            oracle.extend(coneop.bessel_oracle(nu, len(group)))
        data["oracle"] = oracle
        data["rel_error"] = np.abs(data["eigenvalue"] - data["oracle"]) / data["oracle"]
        first = data[(data["mode"] == 0) & (data["k"] == 1)]["rel_error"].iloc[0]
        verdicts.append(Verdict.PASS if first < cfg.tolerances["oracle_rel_tol"] else Verdict.FAIL)
    manifest.write_csv(data, "eigenvalues.csv")

    report = coneop.check_parameter_ellipticity(op.frozen(), _sector(cfg))
    manifest.write_csv(report.details, "ellipticity.csv")
    verdicts.append(report.verdict)
    return verdicts


def run_heat(cfg: ExperimentConfig, manifest: Manifest, svg: bool) -> list:
    op = coneop.from_config(cfg)
    spec = _heat_spectrum(cfg, op)
    series = traces.weighted_heat_trace(spec, _weight(cfg), cfg.t_grid())
    manifest.write_csv(series.to_frame(), "heat_trace.csv")

    predicted = asymptotics.predict_terms(series.meta, "heat", cfg.k_max)
    terms = asymptotics.term_columns(predicted, max_log=cfg.max_log)
    expansion = asymptotics.fit_expansion(series, terms, free_leading=True)
    manifest.write_csv(expansion.to_frame(), "heat_expansion.csv")

    middle = float(np.sqrt(cfg.t_min * cfg.t_max))
    windows = [(cfg.t_min, middle), (middle, cfg.t_max)]
    lead = min(g for g, _ in terms)
    stability = asymptotics.window_stability(series, terms, windows, lead)
    manifest.write_csv(stability.assign(coefficient=stability["coefficient"].apply(lambda c: c.real)),
                       "heat_window_stability.csv")
    checks = asymptotics.heat_checks(series, predicted, expansion, stability, max_log=cfg.max_log)
    manifest.write_csv(checks, "heat_checks.csv")
    if svg:
        manifest.write_svg("heat_fit.svg", series.param, series.values, expansion.evaluate(series.param),
                           title="heat trace and fitted expansion")
    return [Verdict(v) for v in checks["verdict"]]


def run_resolvent(cfg: ExperimentConfig, manifest: Manifest, svg: bool) -> list:
    op = coneop.from_config(cfg)
    disc = coneop.discretize(op, s_min=cfg.s_min, npoints=cfg.npoints, s_max=cfg.s_max)
    moduli = np.geomspace(cfg.lam_decay_min, cfg.lam_decay_max, 9)
    norms = [coneop.resolvent_norm(disc, -modulus) for modulus in moduli]
    decay = pd.DataFrame({"lam_abs": moduli, "norm": norms})
    slope = float(np.polyfit(np.log(moduli), np.log(norms), 1)[0])
    decay["slope"] = slope
    manifest.write_csv(decay, "resolvent_norm_decay.csv")

    frozen = coneop.discretize(op.frozen(), s_min=cfg.s_min, npoints=cfg.npoints, s_max=4.0)
    manifest.write_csv(coneop.kappa_homogeneity_deviation(frozen, moduli[moduli <= 1e4]), "kappa_homogeneity.csv")

    spec = _heat_spectrum(cfg, op)
    series = traces.resolvent_power_trace(spec, _weight(cfg), cfg.N, cfg.lam_grid())
    manifest.write_csv(series.to_frame(), "resolvent_trace.csv")
    expansion = asymptotics.fit_expansion(series, _fit_terms(cfg, series.meta, "resolvent"))
    manifest.write_csv(expansion.to_frame(), "resolvent_expansion.csv")
    if svg:
        manifest.write_svg("resolvent_fit.svg", series.param, series.values, expansion.evaluate(series.param),
                           title="resolvent power trace and fitted expansion")
    verdicts = [Verdict.PASS if -1.05 <= slope <= -0.95 else Verdict.FAIL]
    if asymptotics.weight_family_exponent(series.meta, "resolvent") is not None:
        family, gamma, detected = asymptotics.detect_weight_family(series, max_log=cfg.max_log)
        manifest.write_csv(family.to_frame().assign(weight_family=gamma), "resolvent_weight_family.csv")
        verdicts.append(Verdict.PASS if detected else Verdict.FAIL)
    return verdicts


def run_zeta(cfg: ExperimentConfig, manifest: Manifest, svg: bool) -> list:
    op = coneop.from_config(cfg)
    spec = traces.oracle_spectrum(op.frozen(), cfg.lambda_cut)
    series = traces.heat_trace(spec, np.geomspace(cfg.t_min, cfg.zeta_t0, cfg.t_samples))
    terms = _fit_terms(cfg, series.meta, "heat")
    fit = asymptotics.fit_expansion(series, terms)
    manifest.write_csv(fit.to_frame(), "zeta_heat_expansion.csv")
    free = asymptotics.fit_expansion(series, terms, free_leading=True)

    result = asymptotics.zeta_continue(series, fit, cfg.z_grid, spec, t0=cfg.zeta_t0)
    manifest.write_csv(result.values, "zeta_values.csv")
    manifest.write_csv(result.poles, "zeta_poles.csv")
    direct, bound = traces.complex_power_sum(spec, -3.0)
    continued = result.function(complex(-3.0))
    check = pd.DataFrame([{"z": -3.0, "continued": continued.real, "direct": complex(direct).real,
                           "tail_bound": bound}])
    manifest.write_csv(check, "zeta_direct_check.csv")
    checks = asymptotics.zeta_checks(result, fit, free.leading_exponent, direct, at=-3.0)
    manifest.write_csv(checks, "zeta_checks.csv")
    return [Verdict(v) for v in checks["verdict"]]


def run_index(cfg: ExperimentConfig, manifest: Manifest, svg: bool) -> list:
    rng = np.random.default_rng(cfg.seed)
    matrix = rng.standard_normal((40, 60))
    t_list = np.array([0.1, 1.0, 10.0])
    manifest.write_csv(pd.DataFrame({"t": t_list, "value": index_formula.mckean_singer(matrix, t_list)}),
                       "mckean_singer.csv")

    op = coneop.from_config(cfg)
    disc = coneop.discretize(op.frozen(), s_min=cfg.s_min, npoints=min(cfg.npoints, 400), s_max=cfg.s_max)
    H = index_formula.rank_one_example(mu=op.mu)
    report = index_formula.index_assemble(index_formula.Factorization(B=disc, H=H))
    manifest.write_csv(report.to_frame(), "index_report.csv")

    taus = [2.0 ** -k for k in range(2, 2 + cfg.tau_count)]
    decay = index_formula.invariance_red_to_const(op, taus, eps=cfg.eps, s_min=cfg.s_min)
    manifest.write_csv(decay.table.assign(slope=decay.slope), "red_to_const.csv")
    sweep = index_formula.invariance_red_to_sobolev(op, cfg.eps_list, s_min=cfg.s_min)
    manifest.write_csv(sweep, "red_to_sobolev.csv")
    return [report.verdict, decay.verdict] + [Verdict(v) for v in sweep["verdict"]]


def _index_set_cases(rng: np.random.Generator, count: int, cutoff: float = 6.0) -> pd.DataFrame:
    mismatches = {"sum": 0, "extended_union": 0, "composition": 0}
    for _ in range(count):
        E, F = (indexsets.random_index_set(rng, cutoff) for _ in range(2))
        if (E + F).entries != indexsets.brute_force_sum(E, F).entries:
            mismatches["sum"] += 1
        if E.extended_union(F).entries != indexsets.brute_force_extended_union(E, F).entries:
            mismatches["extended_union"] += 1
        family = [indexsets.random_index_set(rng, cutoff) for _ in range(8)]
        left = indexsets.IndexFamily4(*family[:3], fi=family[3])
        right = indexsets.IndexFamily4(*family[4:7], fi=family[7])
        composed = indexsets.compose_family(left, right).components()
        expected = indexsets.brute_force_compose(left, right).components()
        if any(composed[face].entries != expected[face].entries for face in composed):
            mismatches["composition"] += 1
    return pd.DataFrame([{"law": law, "cases": count, "mismatches": bad} for law, bad in mismatches.items()])


def run_verify(cfg: ExperimentConfig, manifest: Manifest, svg: bool) -> list:
    rng = np.random.default_rng(cfg.seed)
    rows = []

    laws = _index_set_cases(rng, 10_000)
    manifest.write_csv(laws, "verify_index_sets.csv")
    rows.append({"check": "index-set algebra", "verdict": "PASS" if laws["mismatches"].sum() == 0 else "FAIL"})

    resolvent = symbols.resolvent_symbol(symbols.abs_power(2.0), symbols.abs_power(0.0), 1, symbols.LEFT_HALF_PLANE)
    good = symbols.seminorm_check(resolvent)
    bad = symbols.seminorm_check(resolvent.with_orders(resolvent.mu - 1.0))
    manifest.write_csv(good.table, "verify_seminorms.csv")
    misdeclared = (not bad.passed) and float(bad.table["growth_slope"].max()) >= 0.9
    rows.append({"check": "symbol seminorms", "verdict": "PASS" if good.passed and misdeclared else "FAIL"})

    cases = []
    for a, b in asymptotics.random_separable_cases(cfg.seed, cfg.cases):
        u, E_lb, E_rb, exact = asymptotics.separable_pushforward(a, b)
        result = asymptotics.pushforward_fund2(u, E_lb, E_rb)
        error = max(abs(result.expansion.coefficient(g, j) - c) for (g, j), c in exact.items())
        logs_ok = result.expansion.is_detected(a, 1) == (a == b)
        cases.append({"a": a, "b": b, "verdict": result.verdict.value, "max_coeff_error": error,
                      "log_term_ok": logs_ok})
    pushforward = pd.DataFrame(cases)
    manifest.write_csv(pushforward, "verify_pushforward.csv")
    ok = (pushforward["verdict"] == "PASS").all() and pushforward["log_term_ok"].all() \
        and (pushforward["max_coeff_error"] < 1e-6).all()
    rows.append({"check": "pushforward lemma", "verdict": "PASS" if ok else "FAIL"})

    phi = traces.tip_cutoff()
    a = 0.5
    E = indexsets.IndexSet.from_pairs([(a, 0)], 3.0, cinf_step=True)
    ode = asymptotics.ode_fund1(lambda x: -phi(x) * x ** a, E, a)
    coefficient = ode.expansion.coefficient(a, 1)
    manifest.write_csv(ode.expansion.to_frame(), "verify_ode.csv")
    rows.append({"check": "ODE lemma", "verdict": "PASS" if ode.verdict == Verdict.PASS
                 and abs(coefficient + 1.0) < cfg.tolerances["identity_tol"] else "FAIL"})

    symbol = symbols.resolvent_symbol(symbols.abs_power(2.0), symbols.abs_power(0.0), 2, symbols.LEFT_HALF_PLANE)
    components, _ = symbols.homog_expand(symbol, 1)
    component = asymptotics.trace_component_Ak(components[0], chi_radius=1.0, mu=2.0, N=2, n=1, k=0)
    manifest.write_csv(component.identity.assign(lhs=component.identity["lhs"].apply(abs),
                                                 rhs=component.identity["rhs"].apply(abs)),
                       "verify_component_identity.csv")
    rows.append({"check": "component identity", "verdict": component.verdict.value})

    summary = pd.DataFrame(rows)
    manifest.write_csv(summary, "verify_summary.csv")
    print(summary)
    return [Verdict(v) for v in summary["verdict"]]


RUNNERS = {"spectrum": run_spectrum, "heat": run_heat, "resolvent": run_resolvent, "zeta": run_zeta,
           "index": run_index, "verify": run_verify}


def _exit_code(verdicts: list) -> int:
    if Verdict.FAIL in verdicts:
        return EXIT_FAILED
    if Verdict.UNDECIDED in verdicts:
        return EXIT_UNDECIDED
    return EXIT_OK


def run(subcommand: str, cfg: ExperimentConfig, out_dir: Path, svg: bool = False) -> int:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out_dir=out_dir, config_digest=cfg.digest())
    try:
        verdicts = RUNNERS[subcommand](cfg, manifest, svg)
    except ConeToolkitError as exc:
        logger.error("%s failed: %s", subcommand, exc)
        manifest.close(complete=False, error=exc)
        return exc.exit_code
    manifest.close(complete=True)
    code = _exit_code(verdicts)
    logger.info("%s finished with exit code %d", subcommand, code)
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Cone-operator spectral asymptotics experiments")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", default="laplace_type.csv", help="key,value CSV (resolved in assets/configs)")
    parser.add_argument("--out", default=None, help="output directory (default assets/data/<subcommand>)")
    parser.add_argument("--svg", action="store_true", help="also write fit plots as SVG")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--tolerance-profile", choices=("default", "strict"), default=None)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed, profile=args.tolerance_profile)
    except ConeToolkitError as exc:
        logger.error("invalid configuration: %s", exc)
        return exc.exit_code
    out_dir = Path(args.out) if args.out else DATA_DIR / args.subcommand
    return run(args.subcommand, cfg, out_dir, svg=args.svg)


if __name__ == "__main__":
    sys.exit(main())
