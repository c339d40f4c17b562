"""Command-line front end: ``fermiwalk {propagate,spectral,converge,genericity,verify}``."""

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, config, dynamics, genericity, io, spectral
from ._linalg import op_norm
from .coupling import build_T_hop
from .errors import BudgetExceededError, ConfigurationError, FermiwalkError, HypothesisViolationError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_BUDGET, EXIT_HYPOTHESIS = 0, 1, 2, 3, 4
MAX_AUTO_STEPS = 200_000


class _Run:
    """Resolved config plus the provenance attached to every output row."""

    def __init__(self, cfg, out):
        self.cfg = cfg
        self.resolved = config.resolved_dict(cfg)
        self.hash = io.config_hash(self.resolved)
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        tol = cfg.tolerances
        self.tol_cols = [tol.cluster, tol.circle, tol.assumption, tol.prune]

    def header(self, *cols):
        return ["config_hash", "version", "mode", *cols,
                "cluster_tol", "circle_tol", "assumption_tol", "prune_tol"]

    def row(self, mode, *vals):
        return [self.hash, __version__, mode, *vals, *self.tol_cols]

    def meta(self, **extra):
        return {"version": __version__, "config_hash": self.hash, "config": self.resolved, **extra}


def _propagate_one(inst, X, t, lam, mode, threads):
    cfg = inst.cfg
    maps, sym = inst.maps, inst.symbol
    if mode == "exact":
        return dynamics.exact_propagate(maps, sym, X, t, lam, cfg.tolerances.prune, cfg.budget, threads)
    if mode == "truncated":
        return dynamics.truncated_propagate(maps, sym, X, t, lam, min(cfg.order, t), budget=cfg.budget,
                                            threads=threads)
    if mode == "ris":
        return dynamics.ris_propagate(maps, sym, X, t, lam)
    return dynamics.PropagatorResult(dynamics.limit_propagate(maps, X, t), 1, 0.0, "limit", t, lam)


def _fit_slope(xs, ys):
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    ok = (ys > 0) & np.isfinite(ys)
    if ok.sum() < 2 or np.ptp(xs[ok]) == 0:
        return None, None, int(ok.sum())
    slope, icpt = np.polyfit(xs[ok], np.log(ys[ok]), 1)
    return float(slope), float(icpt), int(ok.sum())


def run_propagate(cfg, out, threads=1):
    run = _Run(cfg, out)
    inst = config.build_instance(cfg)
    maps, X = inst.maps, inst.observable
    D = maps.dim
    diag_sym = inst.symbol.is_diagonal
    rows, records = [], []
    series = {}
    for lam in cfg.lambdas:
        for t in cfg.times:
            res = _propagate_one(inst, X, t, lam, cfg.mode, threads)
            limit = dynamics.limit_propagate(maps, X, t)
            free = X.reshape(-1)
            for _ in range(t):
                free = maps.superop_V @ free
            err_limit = op_norm(res.result - limit)
            err_free = op_norm(res.result - free.reshape(D, D))
            ris_diff = None
            if diag_sym and cfg.mode != "ris":
                ris_diff = op_norm(res.result - dynamics.ris_propagate(maps, inst.symbol, X, t, lam).result)
            order = res.order if cfg.mode == "truncated" else None
            rows.append(run.row(cfg.mode, order, lam, t, err_limit, err_free, ris_diff,
                                res.paths_summed, res.pruned_mass))
            series.setdefault(t, []).append((lam ** 2, err_limit))
            rec = {"lambda": lam, "t": t, "err_to_limit": err_limit, "err_to_free": err_free,
                   "ris_difference": ris_diff, "paths_summed": res.paths_summed,
                   "pruned_mass": res.pruned_mass, "order": order}
            if cfg.output.matrices:
                rec["result"] = io.matrix_to_json(res.result)
            records.append(rec)
    io.write_csv(run.out / "propagate.csv",
                 run.header("order", "lambda", "t", "err_to_limit", "err_to_free", "ris_difference",
                            "paths_summed", "pruned_mass"), rows)
    fit_rows, fits = [], []
    for t in sorted(series):
        xs, ys = zip(*series[t])
        slope, icpt, npts = _fit_slope(xs, ys)
        expected = -inst.coupling.gap / 4
        fit_rows.append(run.row(cfg.mode, t, slope, icpt, npts, expected))
        fits.append({"t": t, "slope": slope, "intercept": icpt, "points": npts, "expected_slope": expected})
    io.write_csv(run.out / "propagate_fit.csv",
                 run.header("t", "slope_vs_lambda2", "intercept", "points", "expected_slope"), fit_rows)
    io.write_json(run.out / "propagate.json",
                  run.meta(gap=inst.coupling.gap, V_index=inst.V_index, results=records, fits=fits,
                           V=io.matrix_to_json(inst.V), observable=io.matrix_to_json(X)))
    return EXIT_OK


def _analyse_spectrum(inst):
    cfg = inst.cfg
    split = spectral.split_contraction(inst.maps, cfg.tolerances.circle)
    predicted = spectral.predicted_peripheral(inst.V, inst.coupling)
    summary = {
        "predicted_peripheral": predicted,
        "peripheral": list(split.peripheral_eigenvalues),
        "peripheral_multiplicities": list(split.peripheral_multiplicities),
        "peripheral_distance": spectral.compare_peripheral(split, predicted),
        "multiplicity_of_1": split.multiplicity_of(1.0),
        "max_decaying_modulus": split.subdominant_modulus,
        "gamma_raw": split.gamma_raw,
        "gamma": split.gamma,
        "C_bound_fitted": split.C_bound,
        "commutation_error": split.commutation_error,
        "peripheral_residuals": list(spectral.peripheral_residuals(inst.maps, split)),
    }
    return split, summary


def run_spectral(cfg, out, threads=1):
    run = _Run(cfg, out)
    inst = config.build_instance(cfg)
    split, summary = _analyse_spectrum(inst)
    report = None
    if inst.coupling.is_second_quantized:
        report = spectral.assumption_report(inst.V, inst.coupling, cfg.tolerances.assumption,
                                            literal_snd=cfg.d <= 8)
    rows = [run.row("spectral", *r) for r in spectral.spectrum_table(split)]
    io.write_csv(run.out / "spectrum.csv",
                 run.header("re", "im", "modulus", "phase", "classification"), rows)
    io.write_json(run.out / "spectral.json",
                  run.meta(V_index=inst.V_index, V=io.matrix_to_json(inst.V), spectrum=summary,
                           assumptions=None if report is None else report.to_dict(),
                           main_assumptions=None if report is None else report.main_assumptions))
    return EXIT_OK


def run_converge(cfg, out, threads=1):
    run = _Run(cfg, out)
    inst = config.build_instance(cfg)
    conv = cfg.converge
    split = spectral.split_contraction(inst.maps, cfg.tolerances.circle)
    steady = spectral.steady_state(inst.rho0, split, inst.coupling, cfg.tolerances.assumption)
    t_star = None
    if split.C_bound and math.isfinite(split.gamma) and split.gamma > 0:
        t_star = max(0, math.ceil(2 * math.log(max(split.C_bound, 1.0) / conv.target) / split.gamma))
    t_max = conv.t_max if conv.t_max is not None else min(t_star or 0, MAX_AUTO_STEPS)
    rows, last = [], None
    for t, rho in dynamics.state_trajectory(inst.maps, inst.symbol, inst.rho0, t_max, conv.lam,
                                            conv.mode, cfg.order, conv.stride, threads, cfg.budget):
        dist = op_norm(rho - steady.closed_form)
        rows.append(run.row(conv.mode, conv.lam, t, dist))
        last = (t, dist)
    io.write_csv(run.out / "converge.csv", run.header("lambda", "t", "distance_to_limit"), rows)
    ts = np.array([float(r[4]) for r in rows])
    ds = np.array([float(r[5]) for r in rows])
    tail = ds > 1e-13
    rate = None
    if tail.sum() >= 2:
        rate = float(-np.polyfit(ts[tail], np.log(ds[tail]), 1)[0])
    io.write_json(run.out / "converge.json",
                  run.meta(V_index=inst.V_index, t_star=t_star, t_max=t_max,
                           terminal=None if last is None else {"t": last[0], "distance": last[1]},
                           predicted_rate=steady.rate, fitted_rate=rate, gamma_raw=split.gamma_raw,
                           C_bound_fitted=split.C_bound,
                           closed_vs_projected=steady.discrepancy,
                           steady_state=io.matrix_to_json(steady.closed_form)))
    return EXIT_OK


def run_genericity(cfg, out, threads=1):
    run = _Run(cfg, out)
    g = cfg.genericity
    d = cfg.d
    n_max = g.n_max or d
    coupling = build_T_hop(d) if g.assumptions and d >= 3 else None
    tol = cfg.tolerances.assumption

    def one(sample):
        scan = genericity.minor_scan(sample.U, n_max)
        flags = (None, None, None)
        if coupling is not None:
            rep = spectral.assumption_report(sample.U, coupling, tol, cyc=False, literal_snd=False)
            flags = (rep.snd.holds, rep.diag.holds, rep.offdiag.holds)
        return scan, flags

    results = genericity.run_samples(one, d, cfg.seed, g.samples, threads)
    rows = []
    passes, small = [], 0
    for i, (scan, flags) in enumerate(results):
        mins = [scan.minima[n] for n in range(1, n_max + 1)]
        small += any(m < 1e-12 for m in mins)
        ok = None if flags[0] is None else all(flags)
        passes.append(ok)
        rows.append(run.row("genericity", i, cfg.seed, *mins, *flags, ok))
    header = run.header("sample", "seed", *[f"min_minor_{n}" for n in range(1, n_max + 1)],
                        "snd", "diag", "offdiag", "all_assumptions")
    io.write_csv(run.out / "genericity.csv", header, rows)
    rate = genericity.pass_rate(passes) if coupling is not None else None
    io.write_json(run.out / "genericity.json",
                  run.meta(samples=g.samples, samples_with_small_minor=small, assumption_pass_rate=rate))
    return EXIT_OK


def run_verify(args):
    from . import acceptance

    results = acceptance.run_all(threads=args.threads, echo=True)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        io.write_json(out / "verify.json", [r.to_dict() for r in results])
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


COMMANDS = {
    "propagate": run_propagate,
    "spectral": run_spectral,
    "converge": run_converge,
    "genericity": run_genericity,
}


def build_parser():
    p = argparse.ArgumentParser(prog="fermiwalk", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="YAML file or preset name")
        s.add_argument("--seed", type=int, default=None, help="override the master seed")
        s.add_argument("--threads", type=int, default=1)
        s.add_argument("--out", default=".", help="output directory")
    v = sub.add_parser("verify", help="run the acceptance suite")
    v.add_argument("--threads", type=int, default=1)
    v.add_argument("--out", default=None)
    sub.add_parser("presets", help="list bundled configurations")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "presets":
            print("\n".join(config.preset_names()))
            return EXIT_OK
        if args.command == "verify":
            return run_verify(args)
        if args.threads < 1:
            raise ConfigurationError("--threads must be >= 1")
        overrides = {"seed": args.seed} if args.seed is not None else None
        cfg = config.load_config_source(args.config, overrides)
        return COMMANDS[args.command](cfg, args.out, args.threads)
    except BudgetExceededError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except HypothesisViolationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except (ConfigurationError, FermiwalkError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
