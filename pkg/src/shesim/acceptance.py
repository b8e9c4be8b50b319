"""The acceptance battery: every numbered criterion as a callable check.

Each criterion returns a CriterionResult with the measured numbers, its
tolerance, and the wall time.  Heavy simulations are shared through an
AcceptanceContext so the l^1-martingale and decay checks reuse one run, as
do the local CLT and increment-ratio tests.

Step sizes, box sizes, and replica counts here are the validated desk-scale
recipes: they were chosen so that discretization bias is small against the
Monte Carlo standard errors each check uses.

Criterion 5 (k = 3) is reported as an expected failure: its stated
constant exp{[k(k-1) q^2 - k] t} corresponds to doubling the pairwise
collision weight, while the weight that matches both the Ito isometry and
the direct field simulation (enforced by criterion 3's oracle triangle)
caps that moment strictly below the constant.  The check runs as stated
and the report carries the flag, rather than silently loosening the bound.
"""

import math
import os
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from . import experiments as xp
from . import moments as mo
from .noise import NoisePlan
from .renewal import RenewalProblem, comparison_check, critical_beta, picard_solve
from .sde import (Box, Nonlinearity, ProfileSpec, SolverConfig,
                  coupled_simulate, profile_constant, profile_delta,
                  run_replicated)
from .walkkernel import WalkKernel, simple_walk

MASTER_SEED = 20240915


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    runtime_s: float
    details: dict = field(default_factory=dict)
    expected_defect: bool = False

    def line(self):
        status = "PASS" if self.passed else (
            "FAIL (documented defect)" if self.expected_defect else "FAIL")
        return f"criterion {self.number:02d} {status} [{self.runtime_s:7.1f}s] {self.title}"


class AcceptanceContext:
    """Lazy shared state for the battery (expensive runs used twice)."""

    def __init__(self, threads=1):
        self.threads = threads
        self._cache = {}

    def _get(self, key, builder):
        if key not in self._cache:
            self._cache[key] = builder()
        return self._cache[key]

    # -- shared heavy runs ------------------------------------------------
    def d3_run(self):
        """PAM d=3, q=0.5, u0=delta, 16^3 periodic box, 2000 replicas."""
        def build():
            kernel = WalkKernel(simple_walk(3))
            box = Box((16, 16, 16))
            record = tuple(sorted({0.0, 1.0, 5.0, 20.0,
                                   *np.arange(10.0, 40.0 + 1e-9, 2.0)}))
            cfg = SolverConfig(dt=0.05, horizon=40.0,
                               scheme="split-exact-linear",
                               snapshot_times=record)
            plan = NoisePlan(seed=MASTER_SEED, dt_min=0.05)
            res = run_replicated(kernel, box, Nonlinearity.linear(0.5),
                                 profile_delta(box), cfg, plan, 2000,
                                 threads=self.threads)
            return res
        return self._get("d3", build)

    def local_run(self):
        """PAM d=1, q=1, t=1, tau ladder, 4 sites, 2000 replicas."""
        def build():
            kernel = WalkKernel(simple_walk(1))
            box = Box((33,))
            return xp.local_increment_run(
                kernel, box, Nonlinearity.linear(1.0),
                profile_constant(box, 1.0), t=1.0,
                taus=(0.04, 0.01, 0.0025),
                sites=((-6,), (-2,), (2,), (6,)), replicas=2000,
                dt=1.25e-4, seed=MASTER_SEED + 9,
                scheme="split-exact-linear", threads=self.threads)
        return self._get("local", build)

    def fk_flat_shared(self, t, n=200000, seed_offset=0):
        """Shared-walk moments E exp(q^2 sum of pair overlaps), k = 2..4,
        for the flat profile at q = 1 (d = 1 simple walk)."""
        def build():
            kernel = WalkKernel(simple_walk(1))
            batch = mo._PathBatch(kernel, t, 4, n, MASTER_SEED + 4,
                                  stream=seed_offset)
            ov = batch.pair_overlaps()   # pair columns: 01,02,03,12,13,23
            cols = {2: [0], 3: [0, 1, 3], 4: [0, 1, 2, 3, 4, 5]}
            out = {}
            for k, idx in cols.items():
                w = np.exp(ov[:, idx].sum(axis=1))
                est = float(w.mean())
                se = float(w.std(ddof=1) / math.sqrt(n))
                out[k] = (est, se)
            return out
        return self._get(("fkflat", t, n, seed_offset), build)


def _timed(fn):
    t0 = time.time()
    out = fn()
    return out, time.time() - t0


# ----------------------------------------------------------------------
# criteria
# ----------------------------------------------------------------------
def criterion_1(ctx):
    def body():
        details = {}
        ok = True
        for d in (1, 2):
            kernel = WalkKernel(simple_walk(d))
            for tau in (0.1, 0.5, 2.0):
                four = kernel.coincidence_prob(tau)
                latt = kernel.coincidence_prob_lattice(tau)
                gap = abs(four - latt)
                details[f"overlap_gap_d{d}_tau{tau}"] = gap
                ok &= gap <= 1e-8
        k1 = WalkKernel(simple_walk(1))
        g2 = k1.coincidence_green(2.0)
        details["green2_d1_err"] = abs(g2 - 1.0 / math.sqrt(12.0))
        ok &= details["green2_d1_err"] <= 1e-6
        k3 = WalkKernel(simple_walk(3))
        g0 = k3.coincidence_green(0.0)
        details["green0_d3_err"] = abs(g0 - 1.5163860592 / 2.0)
        ok &= details["green0_d3_err"] <= 1e-3
        return ok, details
    (ok, details), dt = _timed(body)
    ok &= dt < 60.0
    details["runtime_limit_s"] = 60.0
    return CriterionResult(1, "kernel oracles (dual-route overlap, Green values)",
                           ok, dt, details)


def criterion_2(ctx):
    def body():
        kernel = WalkKernel(simple_walk(1))
        box = Box((65,))
        step = 1e-3
        cfg = SolverConfig(dt=step, horizon=1.0, snapshot_times=(1.0,),
                           keep_snapshots=True)
        plan = NoisePlan(seed=MASTER_SEED + 2, dt_min=step)
        res = run_replicated(kernel, box, Nonlinearity.zero(),
                             profile_delta(box), cfg, plan, 1)
        snap = res.snapshots[1.0][0]
        prof = kernel.transition_profile(1.0)
        ref = np.array([prof.prob((-int(x),)) for x in box.coords()[:, 0]])
        err = float(np.abs(snap.ravel() - ref).max())
        return err < 5 * step, {"sup_err": err, "bound": 5 * step}
    (ok_details), dt = _timed(body)
    ok, details = ok_details
    return CriterionResult(2, "deterministic heat limit matches the walk kernel",
                           ok, dt, details)


def criterion_3(ctx):
    def body():
        kernel = WalkKernel(simple_walk(1))
        q = 0.5
        t_probe = (0.5, 1.0, 2.0)
        curve = mo.pam_second_moment_renewal(kernel, q, ProfileSpec("delta"), 2.0)
        box = Box((65,))
        cfg = SolverConfig(dt=2e-3, horizon=2.0, scheme="split-exact-linear",
                           snapshot_times=t_probe)
        plan = NoisePlan(seed=MASTER_SEED + 3, dt_min=2e-3)
        res = run_replicated(kernel, box, Nonlinearity.linear(q),
                             profile_delta(box), cfg, plan, 10000,
                             threads=ctx.threads)
        ok = True
        details = {"renewal_halving_err": curve.halving_error}
        for i, t in enumerate(t_probe):
            l2 = res.series["l2sq"][:, res.at_time(t)]
            field_est = float(l2.mean())
            field_se = float(l2.std(ddof=1) / math.sqrt(len(l2)))
            fk = mo.fk_pam_l2_delta(kernel, q, t, 200000,
                                    seed=MASTER_SEED + 3, stream=i + 1)
            ren = curve.at(t)
            ren_se = curve.halving_error
            pairs = {
                "field_vs_fk": (field_est, field_se, fk.estimate, fk.se),
                "field_vs_renewal": (field_est, field_se, ren, ren_se),
                "fk_vs_renewal": (fk.estimate, fk.se, ren, ren_se),
            }
            for name, (a, sa, b, sb) in pairs.items():
                gap = abs(a - b)
                lim = 3.0 * math.hypot(sa, sb)
                details[f"t{t}_{name}"] = (gap, lim)
                ok &= gap <= lim
            details[f"t{t}_values"] = (field_est, fk.estimate, ren)
        return ok, details
    (ok, details), dt = _timed(body)
    ok &= dt < 600.0
    return CriterionResult(3, "second-moment oracle triangle (field MC, particle MC, renewal)",
                           ok, dt, details)


def criterion_4(ctx):
    def body():
        t_grid = (0.5, 1.0, 1.5, 2.0)
        moments = {t: ctx.fk_flat_shared(t, seed_offset=i)
                   for i, t in enumerate(t_grid)}
        details = {}
        ok = True
        # increasing and convex in k at t = 2
        at2 = moments[2.0]
        logm = {k: math.log(at2[k][0]) for k in (2, 3, 4)}
        se_log = {k: at2[k][1] / at2[k][0] for k in (2, 3, 4)}
        details["logm_t2"] = logm
        inc = (logm[3] - logm[2] > -(se_log[3] + se_log[2]) and
               logm[4] - logm[3] > -(se_log[4] + se_log[3]))
        convex = (logm[4] - 2 * logm[3] + logm[2]
                  > -(se_log[2] + 2 * se_log[3] + se_log[4]))
        details["increasing"] = inc
        details["convex_gap"] = logm[4] - 2 * logm[3] + logm[2]
        ok &= inc and convex
        # fitted growth rates against 8 k^2 (lip = q = 1)
        fits = {}
        for k in (2, 3, 4):
            logs = [math.log(moments[t][k][0]) for t in t_grid]
            fits[k] = mo.fit_lyapunov(t_grid, logs, seed=MASTER_SEED)
        verdicts = mo.check_k2_bounds(fits, lip=1.0, ell=1.0, eps=0.5)
        for v in verdicts:
            details[f"k{v.k}"] = (v.estimate, v.ci, v.verdict, v.upper_bound)
            ok &= v.verdict != "violates-upper"
        return ok, details
    (ok, details), dt = _timed(body)
    ok &= dt < 600.0
    return CriterionResult(4, "k^2 moment bracket: log-moments convex, growth below 8 k^2",
                           ok, dt, details)


def criterion_5(ctx):
    def body():
        at1 = ctx.fk_flat_shared(1.0, seed_offset=11)
        details = {}
        ok = True
        for k in (2, 3):
            est, se = at1[k]
            bound = math.exp((k * (k - 1) * 1.0 - k) * 1.0)
            passed = est + 3 * se >= bound
            details[f"k{k}"] = {"estimate": est, "se": se,
                                "stated_bound": bound, "passed": passed}
            ok &= passed
        details["note"] = (
            "the k=3 constant exp(3) presumes a doubled pair-collision "
            "weight; with the weight validated by criterion 3 the moment "
            "is capped at exp(k(k-1)q^2 t / 2) = exp(3), attained only by "
            "fully glued paths, so the estimate sits strictly below it")
        return ok, details
    (ok, details), dt = _timed(body)
    return CriterionResult(5, "particle lower bound exp{[k(k-1)q^2 - k]t} for k = 2, 3",
                           ok, dt, details, expected_defect=not ok)


def criterion_6(ctx):
    def body():
        kernel = WalkKernel(simple_walk(1))
        box = Box((33,))
        details = {}
        # exact ordering under the geometric splitting
        plan = NoisePlan(seed=MASTER_SEED + 6, dt_min=2.5e-4)
        cfg = SolverConfig(dt=1e-3, horizon=0.5, scheme="split-exact-linear",
                           dt_min=2.5e-4, snapshot_times=(0.5,))
        _, _, diag = coupled_simulate(kernel, box, Nonlinearity.linear(1.0),
                                      profile_constant(box, 1.0),
                                      profile_constant(box, 0.5), cfg, plan,
                                      np.arange(64))
        details["split_worst_violation"] = diag.worst_violation()
        ok = diag.worst_violation() == 0.0
        # Euler with a steep Lipschitz coefficient: violations shrink with dt
        sig = Nonlinearity.named("steep-saturating")
        u0 = profile_constant(box, 0.25)
        u0[box.index_of([0])] += 0.5
        v0 = profile_constant(box, 0.25)
        medians = []
        for step in (4e-3, 1e-3, 2.5e-4):
            cfg = SolverConfig(dt=step, horizon=0.5, scheme="euler",
                               dt_min=2.5e-4, snapshot_times=(0.5,),
                               max_dt_lip2=1.0)
            _, _, diag = coupled_simulate(kernel, box, sig, u0, v0, cfg, plan,
                                          np.arange(101))
            medians.append(float(np.median(diag.max_neg_part.max(axis=1))))
        details["euler_medians"] = medians
        ok &= medians[0] > medians[1] > medians[2]
        return ok, details
    (ok, details), dt = _timed(body)
    return CriterionResult(6, "comparison principle: exact under splitting, Euler violations shrink with dt",
                           ok, dt, details)


def criterion_7(ctx):
    def body():
        res = ctx.d3_run()
        details = {}
        ok = True
        for t in (1.0, 5.0, 20.0):
            l1 = res.series["l1"][:, res.at_time(t)]
            mean = float(l1.mean())
            se = float(l1.std(ddof=1) / math.sqrt(len(l1)))
            details[f"t{t}"] = (mean, se)
            ok &= abs(mean - 1.0) <= 3.0 * se
        # weak disorder: the recorded mass maximum stays bounded per replica
        running_max = float(res.series["l1"].max())
        details["max_recorded_l1"] = running_max
        ok &= math.isfinite(running_max)
        return ok, details
    (ok, details), dt = _timed(body)
    return CriterionResult(7, "l^1 mass is a martingale: MC mean stays at ||u0||_1",
                           ok, dt, details)


def criterion_8(ctx):
    def body():
        res = ctx.d3_run()
        times = res.times
        mask = times >= 10.0 - 1e-9
        mean_l2 = res.series["l2sq"].mean(axis=0)
        slope = float(np.polyfit(np.log(times[mask]),
                                 np.log(mean_l2[mask]), 1)[0])
        sup1 = float(res.series["sup"][:, res.at_time(1.0)].mean())
        sup40 = float(res.series["sup"][:, res.at_time(40.0)].mean())
        details = {"slope": slope, "window": (10.0, 40.0),
                   "target": -1.5, "sup_ratio": sup40 / sup1}
        ok = -1.9 <= slope <= -1.1 and sup40 < 0.1 * sup1
        return ok, details
    (ok, details), dt = _timed(body)
    ok &= dt < 1800.0   # shared-run cost lands on whichever ran first
    return CriterionResult(8, "weak-disorder dissipation: l^2 decay slope and sup-norm collapse",
                           ok, dt, details)


def criterion_9(ctx):
    def body():
        data = ctx.local_run()
        rep = xp.clt_increment_test(data, Nonlinearity.linear(1.0))
        by_tau = {s.tau: s for s in rep.stats}
        ks = [by_tau[t].ks_pooled for t in (0.04, 0.01, 0.0025)]
        corr_small = by_tau[0.0025].max_cross_correlation
        details = {"ks_by_tau": dict(zip((0.04, 0.01, 0.0025), ks)),
                   "max_cross_corr_smallest": corr_small,
                   "discard": rep.max_discard_fraction}
        ok = (ks[0] > ks[1] > ks[2] and ks[2] < 0.05 and corr_small < 0.1
              and rep.valid)
        return ok, details
    (ok, details), dt = _timed(body)
    return CriterionResult(9, "scaled increments are asymptotically standard normal and decorrelated",
                           ok, dt, details)


def criterion_10(ctx):
    def body():
        data = ctx.local_run()
        rep = xp.rn_ratio_test(data, Nonlinearity.linear(1.0), eta=0.1)
        exc = rep.exceedances()   # taus in decreasing order
        details = {"exceedances": dict(zip([s.tau for s in rep.stats], exc))}
        return rep.strictly_decreasing(), details
    (ok, details), dt = _timed(body)
    return CriterionResult(10, "increment/noise ratio exceedance falls along the tau ladder",
                           ok, dt, details)


def criterion_11(ctx):
    def body():
        details = {}
        ok = True
        # closed form and halving order
        horizon = 4.0
        sols = {}
        for step in (1.0 / 512, 1.0 / 1024):
            ts = step * np.arange(int(horizon / step) + 1)
            sols[step] = picard_solve(RenewalProblem(
                dt=step, g=np.exp(-ts), h=0.5 * np.exp(-ts))).f
        ts = (1.0 / 512) * np.arange(int(horizon * 512) + 1)
        exact = np.exp(-ts / 2)
        err_c = float(np.abs(sols[1.0 / 512] - exact).max())
        err_f = float(np.abs(sols[1.0 / 1024][::2] - exact).max())
        f1 = sols[1.0 / 512][512]
        details["f1_err"] = abs(f1 - math.exp(-0.5))
        ok &= details["f1_err"] <= 1e-4
        details["halving_ratio"] = err_c / err_f
        ok &= 3.5 <= err_c / err_f <= 4.5
        # comparison verdicts on the three canonical candidates
        prob = RenewalProblem(dt=1.0 / 512, g=np.exp(-ts), h=0.5 * np.exp(-ts))
        f = picard_solve(prob).f
        v1a = comparison_check(prob, f, "super")
        v1b = comparison_check(prob, f, "sub")
        v2 = comparison_check(prob, f + 0.1, "super")
        v3 = comparison_check(prob, np.zeros_like(f), "sub")
        details["verdicts"] = {
            "f_super": (v1a.is_valid_candidate, v1a.ordering_holds),
            "f_sub": (v1b.is_valid_candidate, v1b.ordering_holds),
            "f_plus_super": (v2.is_valid_candidate, v2.ordering_holds),
            "zero_sub": (v3.is_valid_candidate, v3.ordering_holds),
        }
        ok &= v1a.is_valid_candidate and v1a.ordering_holds
        ok &= v1b.is_valid_candidate and v1b.ordering_holds
        ok &= v2.is_valid_candidate and v2.ordering_holds
        # the zero function satisfies F <= g + h*F, so it is a valid
        # sub-solution and must be dominated by f
        ok &= v3.is_valid_candidate and v3.ordering_holds
        # critical growth weight for the 1-d nearest-neighbour family
        kernel = WalkKernel(simple_walk(1))
        bstar = critical_beta(kernel, 2.0)
        details["beta_star_err"] = abs(bstar - 2.0 * (math.sqrt(5.0) - 1.0))
        ok &= details["beta_star_err"] <= 1e-4
        return ok, details
    (ok, details), dt = _timed(body)
    return CriterionResult(11, "renewal solver: closed form, second order, comparison, critical weight",
                           ok, dt, details)


def criterion_12(ctx):
    def body():
        kernel = WalkKernel(simple_walk(1))
        box = Box((33,))
        q = 1.0
        plan = NoisePlan(seed=MASTER_SEED + 12, dt_min=1e-3)
        cfg = SolverConfig(dt=1e-3, horizon=2.0, scheme="split-exact-linear",
                           snapshot_times=(0.5, 1.0, 2.0), keep_snapshots=True)
        res_u, res_v, _ = coupled_simulate(kernel, box, Nonlinearity.linear(q),
                                           profile_constant(box, 1.1),
                                           profile_constant(box, 1.0), cfg,
                                           plan, np.arange(1000))
        details = {}
        ok = True
        for t in (0.5, 1.0, 2.0):
            gap = res_u.snapshots[t] - res_v.snapshots[t]
            persite = (gap ** 2).mean(axis=0)
            worst = float(persite.max())
            bound = 0.01 * math.exp(q * q * t) * 1.25
            details[f"t{t}"] = (worst, bound)
            ok &= worst <= bound
        return ok, details
    (ok, details), dt = _timed(body)
    return CriterionResult(12, "flow continuity: coupled gap second moment under the Gronwall envelope",
                           ok, dt, details)


def criterion_13(ctx):
    def body():
        outs = []
        with tempfile.TemporaryDirectory() as tmp:
            for threads in (1, 4, 8):
                out = os.path.join(tmp, f"t{threads}")
                cmd = [sys.executable, "-m", "shesim.cli", "verify",
                       "--suite", "determinism", "--out", out,
                       "--threads", str(threads)]
                proc = subprocess.run(cmd, capture_output=True, text=True)
                if proc.returncode != 0:
                    return False, {"threads": threads, "stderr": proc.stderr}
                outs.append(out)
            blobs = []
            names = ["determinism_trajectory.csv", "determinism_kernel.csv",
                     "determinism_renewal.csv"]
            for out in outs:
                blob = b""
                for name in names:
                    with open(os.path.join(out, name), "rb") as fh:
                        blob += fh.read()
                blobs.append(blob)
            identical = blobs[0] == blobs[1] == blobs[2]
            return identical, {"bytes": len(blobs[0]), "identical": identical}
    (ok, details), dt = _timed(body)
    return CriterionResult(13, "verify outputs byte-identical at 1/4/8 worker threads",
                           ok, dt, details)


CRITERIA = {i: fn for i, fn in enumerate(
    [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
     criterion_6, criterion_7, criterion_8, criterion_9, criterion_10,
     criterion_11, criterion_12, criterion_13], start=1)}


def run_all(threads=1, only=None, verbose=True):
    ctx = AcceptanceContext(threads=threads)
    results = []
    for number in sorted(CRITERIA):
        if only and number not in only:
            continue
        result = CRITERIA[number](ctx)
        results.append(result)
        if verbose:
            print(result.line(), flush=True)
    return results


def write_report(results, path):
    import json
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("criterion,passed,expected_defect,runtime_s,title,details\n")
        for r in results:
            details = json.dumps(r.details, default=str).replace('"', "'")
            fh.write(f"{r.number},{int(r.passed)},{int(r.expected_defect)},"
                     f"{r.runtime_s:.2f},\"{r.title}\",\"{details}\"\n")
