"""Command-line entry point.

Subcommands: kernel, simulate, moments, lyapunov, renewal, clt-test,
rn-test, dissipation, classify, verify.  Exit codes: 0 success, 1 numeric
failure, 2 manifest/schema violation, 3 acceptance failure (verify).

Every output file starts with a reproducibility stamp (artifact version,
manifest hash, seed); floats are written with repr so reruns are
byte-identical at any thread count.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .errors import NumericFailure, SchemaError
from .manifest import canonical_hash, load_manifest, parse_and_validate
from .noise import NoisePlan
from .renewal import RenewalProblem, picard_solve
from .sde import SolverConfig, run_replicated
from . import experiments as xp
from . import moments as mo

EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_SCHEMA = 2
EXIT_ACCEPTANCE = 3


def _fmt(x):
    # repr of a Python float is shortest-roundtrip and stable across runs
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def _write_csv(path, header, rows, stamp):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, val in stamp.items():
            fh.write(f"# {key}: {val}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _stamp(man, extra=None):
    s = {"shesim-version": __version__, "manifest-sha256": man.sha256,
         "seed": man.seed}
    if extra:
        s.update(extra)
    return s


def _outdir(man, args):
    return args.out if getattr(args, "out", None) else man.output_dir


def _threads(man, args):
    return args.threads if getattr(args, "threads", None) else man.threads


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------
def cmd_kernel(args):
    man = load_manifest(args.manifest)
    out = _outdir(man, args)
    kernel = man.kernel
    wrote = False
    if args.pt is not None:
        prof = kernel.transition_profile(args.pt)
        rows = [(",".join(str(c) for c in pt) if kernel.dim > 1 else pt[0],
                 prof.prob(pt), prof.tail_bound)
                for pt in prof.support_points()]
        _write_csv(os.path.join(out, "kernel_pt.csv"),
                   ["site", "value", "est_error"], rows,
                   _stamp(man, {"t": args.pt}))
        wrote = True
    if args.overlap:
        taus = np.linspace(0.0, args.tmax, args.points)
        vals, err = kernel.coincidence_curve(taus)
        rows = [(t, v, err) for t, v in zip(taus, vals)]
        _write_csv(os.path.join(out, "kernel_overlap.csv"),
                   ["tau", "value", "est_error"], rows, _stamp(man))
        wrote = True
    if args.green:
        betas = [float(b) for b in args.betas.split(",")]
        rows = []
        for b in betas:
            v, e = kernel.coincidence_green(b, with_error=True)
            rows.append((b, v, e))
        _write_csv(os.path.join(out, "kernel_green.csv"),
                   ["beta", "value", "est_error"], rows, _stamp(man))
        wrote = True
    if not wrote:
        print("kernel: nothing requested (use --pt/--overlap/--green)",
              file=sys.stderr)
    return EXIT_OK


def _run_from_manifest(man, threads):
    cfg = SolverConfig(dt=man.dt, horizon=man.horizon, scheme=man.scheme,
                       dt_min=man.dt_min, snapshot_times=man.snapshot_times,
                       observables=man.observables,
                       marked_sites=man.marked_sites,
                       record_b_windows=man.record_b_windows)
    plan = NoisePlan(seed=man.seed, dt_min=cfg.dt_min)
    u0 = man.u0.build(man.box)
    return run_replicated(man.kernel, man.box, man.sigma, u0, cfg, plan,
                          man.replicas, threads=threads)


def cmd_simulate(args):
    man = load_manifest(args.manifest)
    res = _run_from_manifest(man, _threads(man, args))
    header = ["replica", "t"] + list(man.observables) + \
             ["site" + "".join(f"_{c}" for c in s) for s in man.marked_sites]
    rows = []
    for i, rid in enumerate(res.replica_ids):
        for j, t in enumerate(res.times):
            row = [int(rid), t]
            row += [res.series[name][i, j] for name in man.observables]
            row += [res.site_series[tuple(s)][i, j] for s in man.marked_sites]
            rows.append(row)
    _write_csv(os.path.join(_outdir(man, args), "trajectory.csv"),
               header, rows, _stamp(man))
    for w in res.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK


def cmd_moments(args):
    man = load_manifest(args.manifest)
    exp = man.experiment
    ks = exp.get("k", [2])
    ts = exp.get("t", [1.0])
    site = tuple(exp.get("x", [0] * man.kernel.dim))
    modes = exp.get("methods", ["feynman-kac"])
    fk_samples = int(exp.get("fk_samples", 100000))
    rows = []
    if "field-mc" in modes:
        snap = tuple(sorted(set(man.snapshot_times) | set(float(t) for t in ts)))
        cfg = SolverConfig(dt=man.dt, horizon=max(ts), scheme=man.scheme,
                           snapshot_times=snap, marked_sites=(site,))
        plan = NoisePlan(seed=man.seed, dt_min=man.dt)
        res = run_replicated(man.kernel, man.box, man.sigma,
                             man.u0.build(man.box), cfg, plan, man.replicas,
                             threads=_threads(man, args))
        for k in ks:
            for t in ts:
                est = mo.estimate_field_moment(res, k, t, site)
                rows.append((est.method, est.k, est.t, est.estimate, est.se,
                             est.replicas))
    if "feynman-kac" in modes:
        if man.sigma.kind != "linear":
            raise NumericFailure("feynman-kac moments need linear sigma")
        for k in ks:
            for t in ts:
                est = mo.fk_pam_moment(man.kernel, man.sigma.q, man.u0, k, t,
                                       site, fk_samples, seed=man.seed)
                rows.append((est.method, est.k, est.t, est.estimate, est.se,
                             est.replicas))
    if "renewal" in modes:
        if man.sigma.kind != "linear":
            raise NumericFailure("the renewal oracle needs linear sigma")
        curve = mo.pam_second_moment_renewal(man.kernel, man.sigma.q, man.u0,
                                             max(ts))
        for t in ts:
            rows.append(("renewal", 2, t, curve.at(t), curve.halving_error, 0))
    _write_csv(os.path.join(_outdir(man, args), "moments.csv"),
               ["method", "k", "t", "estimate", "se", "replicas"], rows,
               _stamp(man))
    return EXIT_OK


def cmd_lyapunov(args):
    man = load_manifest(args.manifest)
    exp = man.experiment
    ks = exp.get("k", [2, 3, 4])
    t_grid = exp.get("t_grid", [0.5, 1.0, 1.5, 2.0, 2.5, 3.0])
    window = tuple(exp.get("window", (min(t_grid), max(t_grid))))
    fk_samples = int(exp.get("fk_samples", 200000))
    eps = float(exp.get("eps", 0.5))
    if man.sigma.kind != "linear":
        raise NumericFailure("lyapunov driver uses the particle estimator; "
                             "sigma must be linear")
    rows, fits = [], {}
    for k in ks:
        logm = []
        for i, t in enumerate(t_grid):
            est = mo.fk_pam_moment(man.kernel, man.sigma.q, man.u0, k, t,
                                   (0,) * man.kernel.dim, fk_samples,
                                   seed=man.seed, stream=i)
            logm.append(np.log(est.estimate))
        fit = mo.fit_lyapunov(t_grid, logm, window=window, seed=man.seed)
        fits[k] = fit
        rows.append((k, fit.slope, fit.ci_low, fit.ci_high,
                     fit.window[0], fit.window[1]))
    _write_csv(os.path.join(_outdir(man, args), "lyapunov.csv"),
               ["k", "slope", "ci_low", "ci_high", "window_lo", "window_hi"],
               rows, _stamp(man))
    verdicts = mo.check_k2_bounds(fits, lip=man.sigma.lip, ell=man.sigma.ell,
                                  eps=eps)
    vrows = [(v.k, v.verdict, v.upper_bound, v.lower_bound, v.k_threshold)
             for v in verdicts]
    _write_csv(os.path.join(_outdir(man, args), "k2_verdicts.csv"),
               ["k", "verdict", "upper_bound", "lower_bound", "k_threshold"],
               vrows, _stamp(man))
    return EXIT_OK


def cmd_renewal(args):
    if args.builtin == "overlap-kernel":
        from .walkkernel import WalkKernel  # noqa: F401 (manifest provides kernel)
        man = load_manifest(args.manifest)
        dt = args.dt
        n = int(round(args.T / dt))
        ts = dt * np.arange(n + 1)
        pb, _ = man.kernel.coincidence_curve(ts)
        q = man.sigma.q if man.sigma.kind == "linear" else man.sigma.lip
        prob = RenewalProblem(dt=dt, g=pb.copy(), h=q * q * pb.copy(),
                              beta=args.beta)
        stamp = _stamp(man, {"builtin": "overlap-kernel"})
        out = _outdir(man, args)
    else:
        g = np.loadtxt(args.g_csv, delimiter=",")
        h = np.loadtxt(args.h_csv, delimiter=",")
        prob = RenewalProblem(dt=args.dt, g=g, h=h, beta=args.beta)
        stamp = {"shesim-version": __version__,
                 "manifest-sha256": canonical_hash({"g": args.g_csv,
                                                    "h": args.h_csv,
                                                    "dt": args.dt}),
                 "seed": 0}
        out = args.out or "out"
    rep = picard_solve(prob)
    rows = list(zip(prob.times, rep.f, rep.bound))
    _write_csv(os.path.join(out, "renewal.csv"),
               ["t", "f", "tilt_bound"], rows,
               {**stamp, "iterations": rep.iterations,
                "contraction": rep.contraction,
                "tail-mass-proxy": prob.tail_mass_proxy()})
    return EXIT_OK


def _local_data(man, threads):
    exp = man.experiment
    t = float(exp.get("t", 1.0))
    taus = tuple(exp.get("taus", (0.04, 0.01, 0.0025)))
    sites = tuple(tuple(s) for s in exp.get("sites", [[0]]))
    return xp.local_increment_run(man.kernel, man.box, man.sigma,
                                  man.u0.build(man.box), t, taus, sites,
                                  man.replicas, man.dt, man.seed,
                                  scheme=man.scheme, threads=threads), exp


def cmd_clt_test(args):
    man = load_manifest(args.manifest)
    data, exp = _local_data(man, _threads(man, args))
    rep = xp.clt_increment_test(data, man.sigma, z0=float(exp.get("z0", 1.0)))
    rows = [(s.tau, s.ks_pooled, s.max_cross_correlation,
             s.discard_fraction, s.n_used, rep.ks_threshold_pooled)
            for s in rep.stats]
    _write_csv(os.path.join(_outdir(man, args), "clt_test.csv"),
               ["tau", "ks_pooled", "max_cross_correlation",
                "discard_fraction", "n_used", "ks_threshold"], rows,
               _stamp(man, {"degenerate": rep.degenerate, "valid": rep.valid}))
    return EXIT_OK


def cmd_rn_test(args):
    man = load_manifest(args.manifest)
    data, exp = _local_data(man, _threads(man, args))
    rep = xp.rn_ratio_test(data, man.sigma, eta=float(exp.get("eta", 0.1)))
    rows = [(s.tau, s.exceedance, s.discard_fraction, s.n_used)
            for s in rep.stats]
    _write_csv(os.path.join(_outdir(man, args), "rn_test.csv"),
               ["tau", "exceedance", "discard_fraction", "n_used"], rows,
               _stamp(man, {"eta": rep.eta,
                            "strictly_decreasing": rep.strictly_decreasing()}))
    return EXIT_OK


def cmd_dissipation(args):
    man = load_manifest(args.manifest)
    exp = man.experiment
    fit_window = tuple(exp["fit_window"]) if "fit_window" in exp else None
    record = tuple(exp["record_times"]) if "record_times" in exp else None
    rep = xp.dissipation_experiment(man.kernel, man.box, man.sigma, man.u0,
                                    man.horizon, man.dt, man.replicas,
                                    man.seed, scheme=man.scheme,
                                    fit_window=fit_window,
                                    record_times=record,
                                    threads=_threads(man, args))
    rows = list(zip(rep.norms.times, rep.mean_l1, rep.se_l1, rep.mean_l2sq,
                    rep.mean_sup))
    out = _outdir(man, args)
    _write_csv(os.path.join(out, "dissipation_norms.csv"),
               ["t", "mean_l1", "se_l1", "mean_l2sq", "mean_sup"], rows,
               _stamp(man, {"warnings": len(rep.warnings)}))
    _write_csv(os.path.join(out, "dissipation_fit.csv"),
               ["slope", "ci_low", "ci_high", "window_lo", "window_hi",
                "target_exponent"],
               [(rep.fit_slope, rep.fit_ci[0], rep.fit_ci[1],
                 rep.fit_window[0], rep.fit_window[1], rep.target_exponent)],
               _stamp(man))
    for w in rep.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK


def cmd_classify(args):
    man = load_manifest(args.manifest)
    rep = xp.regime_classify(man.sigma.lip, man.sigma.ell, man.kernel)
    payload = {"label": rep.label, "lip_criterion": rep.lip_criterion,
               "ell_criterion": rep.ell_criterion,
               "green_zero": rep.green_zero,
               "growth_rate_lower": rep.growth_rate_lower,
               "manifest_sha256": man.sha256}
    out = os.path.join(_outdir(man, args), "classify.json")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    print(rep.label)
    return EXIT_OK


# ----------------------------------------------------------------------
# verify
# ----------------------------------------------------------------------
_DETERMINISM_MANIFEST = {
    "schema_version": 1,
    "kernel": {"name": "simple-1d"},
    "box": {"extents": [33]},
    "sigma": {"kind": "linear", "q": 0.8},
    "u0": {"kind": "constant", "value": 1.0},
    "solver": {"dt": 0.001, "T": 0.25, "scheme": "split-exact-linear",
               "snapshot_times": [0.0, 0.125, 0.25], "marked_sites": [[0]]},
    "seed": 90210,
    "replicas": 600,
    "output_dir": "out",
}


def _verify_determinism(outdir, threads):
    man = parse_and_validate(json.dumps(_DETERMINISM_MANIFEST))
    cfg = SolverConfig(dt=man.dt, horizon=man.horizon, scheme=man.scheme,
                       snapshot_times=man.snapshot_times,
                       marked_sites=man.marked_sites)
    plan = NoisePlan(seed=man.seed, dt_min=man.dt)
    res = run_replicated(man.kernel, man.box, man.sigma,
                         man.u0.build(man.box), cfg, plan, man.replicas,
                         threads=threads)
    rows = []
    for i, rid in enumerate(res.replica_ids):
        for j, t in enumerate(res.times):
            rows.append([int(rid), t] +
                        [res.series[n][i, j] for n in
                         ("l1", "l2sq", "sup", "negfrac")] +
                        [res.site_series[(0,)][i, j]])
    _write_csv(os.path.join(outdir, "determinism_trajectory.csv"),
               ["replica", "t", "l1", "l2sq", "sup", "negfrac", "site_0"],
               rows, _stamp(man))
    taus = np.linspace(0.0, 5.0, 26)
    vals, err = man.kernel.coincidence_curve(taus)
    _write_csv(os.path.join(outdir, "determinism_kernel.csv"),
               ["tau", "value", "est_error"],
               [(t, v, err) for t, v in zip(taus, vals)], _stamp(man))
    dt = 1.0 / 256
    ts = dt * np.arange(int(2.0 / dt) + 1)
    rep = picard_solve(RenewalProblem(dt=dt, g=np.exp(-ts),
                                      h=0.5 * np.exp(-ts)))
    _write_csv(os.path.join(outdir, "determinism_renewal.csv"),
               ["t", "f"], list(zip(ts, rep.f)), _stamp(man))
    return EXIT_OK


def _read_stamp(path):
    stamp = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("# "):
                break
            key, _, val = line[2:].partition(": ")
            stamp[key] = val.strip()
    return stamp


def _verify_compare(outdir, other):
    names = ["determinism_trajectory.csv", "determinism_kernel.csv",
             "determinism_renewal.csv"]
    for name in names:
        a, b = os.path.join(outdir, name), os.path.join(other, name)
        sa, sb = _read_stamp(a), _read_stamp(b)
        if sa.get("manifest-sha256") != sb.get("manifest-sha256"):
            print(f"refusing to compare {name}: manifest hash mismatch",
                  file=sys.stderr)
            return EXIT_SCHEMA
        with open(a, "rb") as fa, open(b, "rb") as fb:
            if fa.read() != fb.read():
                print(f"determinism violation: {name} differs", file=sys.stderr)
                return EXIT_ACCEPTANCE
    print("outputs byte-identical")
    return EXIT_OK


def cmd_verify(args):
    outdir = args.out or "out"
    os.makedirs(outdir, exist_ok=True)
    threads = args.threads or (os.cpu_count() or 1)
    if args.suite == "determinism":
        code = _verify_determinism(outdir, threads)
        if code == EXIT_OK and args.compare_with:
            code = _verify_compare(outdir, args.compare_with)
        return code
    from .acceptance import run_all, write_report
    only = ([int(x) for x in args.only.split(",")] if args.only else None)
    results = run_all(threads=threads, only=only)
    write_report(results, os.path.join(outdir, "acceptance_report.csv"))
    failed = [r for r in results if not r.passed]
    return EXIT_ACCEPTANCE if failed else EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="shesim",
                                description="semi-discrete stochastic heat "
                                            "equation toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, manifest=True):
        if manifest:
            sp.add_argument("--manifest", required=True,
                            help="path to a JSON run manifest")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker pool size (results are identical at "
                             "any value)")

    sp = sub.add_parser("kernel", help="transition and coincidence tables")
    common(sp)
    sp.add_argument("--pt", type=float, default=None,
                    help="write the transition table at time T")
    sp.add_argument("--overlap", action="store_true",
                    help="write the coincidence probability curve")
    sp.add_argument("--tmax", type=float, default=5.0)
    sp.add_argument("--points", type=int, default=51)
    sp.add_argument("--green", action="store_true",
                    help="write Green values at --betas")
    sp.add_argument("--betas", default="0.5,1,2,4")
    sp.set_defaults(fn=cmd_kernel)

    for name, fn in (("simulate", cmd_simulate), ("moments", cmd_moments),
                     ("lyapunov", cmd_lyapunov), ("clt-test", cmd_clt_test),
                     ("rn-test", cmd_rn_test),
                     ("dissipation", cmd_dissipation),
                     ("classify", cmd_classify)):
        sp = sub.add_parser(name)
        common(sp)
        sp.set_defaults(fn=fn)

    sp = sub.add_parser("renewal", help="solve f = g + h * f on a grid")
    sp.add_argument("--builtin", choices=["overlap-kernel"], default=None)
    sp.add_argument("--manifest", default=None)
    sp.add_argument("--g-csv", default=None)
    sp.add_argument("--h-csv", default=None)
    sp.add_argument("--dt", type=float, default=1.0 / 512)
    sp.add_argument("--T", type=float, default=2.0)
    sp.add_argument("--beta", type=float, default=0.0)
    sp.add_argument("--out", default=None)
    sp.add_argument("--threads", type=int, default=None)
    sp.set_defaults(fn=cmd_renewal)

    sp = sub.add_parser("verify", help="acceptance / determinism suites")
    sp.add_argument("--suite", choices=["acceptance", "determinism"],
                    required=True)
    sp.add_argument("--out", default=None)
    sp.add_argument("--threads", type=int, default=None)
    sp.add_argument("--only", default=None,
                    help="comma-separated criterion numbers")
    sp.add_argument("--compare-with", default=None,
                    help="existing output directory to byte-compare against")
    sp.set_defaults(fn=cmd_verify)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        code = args.fn(args)
    except SchemaError as exc:
        json.dump({"schema_errors": exc.errors}, sys.stderr, indent=2)
        sys.stderr.write("\n")
        code = EXIT_SCHEMA
    except NumericFailure as exc:
        print(f"numeric failure: {exc} {exc.info}", file=sys.stderr)
        code = EXIT_NUMERIC
    return code


if __name__ == "__main__":
    sys.exit(main())
