"""Statistical experiment drivers: local Gaussian behaviour under the scale
function, the increment/noise ratio test, large-time dissipation, and the
disorder-regime classifier.

The limits being probed are tau -> 0 or t -> infinity statements; every
driver therefore reports its thresholds, discard counts, and fit windows
alongside the verdict, and the finite-tau / finite-box bias budget lives in
explicit config constants rather than inside the assertions.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .errors import NumericFailure, SingularIntegrand
from .noise import NoisePlan, bootstrap_rng
from .renewal import critical_beta
from .sde import SolverConfig, run_replicated

# KS acceptance: asymptotic 5% critical value with a finite-tau relaxation.
KS_ASYMPTOTIC_5PCT = 1.36
KS_RELAXATION = 1.5
RN_ETA_DEFAULT = 0.1
RN_MIN_DB = 1e-12
CLT_MAX_DISCARD_FRACTION = 0.01
DECAY_FIT_T_MIN = 10.0


# ----------------------------------------------------------------------
# scale function
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class ScaleFunction:
    """S(z) = int_{z0}^z dw / sigma(w), the increment-normalising map.

    Exact logarithm for linear sigma; adaptive quadrature otherwise.
    Only defined where sigma keeps a single sign on the integration range.
    """

    sigma: object
    z0: float

    def __post_init__(self):
        if self.z0 <= 0:
            raise ValueError("base point z0 must be positive")

    def __call__(self, z):
        z_arr = np.asarray(z, dtype=float)
        if np.any(z_arr <= 0.0):
            raise ValueError("scale function evaluated at z <= 0")
        if self.sigma.kind == "linear":
            if self.sigma.q == 0:
                raise SingularIntegrand("sigma vanishes identically")
            out = np.log(z_arr / self.z0) / self.sigma.q
            return float(out) if np.isscalar(z) else out
        vals = np.atleast_1d(z_arr)
        out = np.array([self._quad_one(float(v)) for v in vals])
        return float(out[0]) if np.isscalar(z) else out.reshape(z_arr.shape)

    def _quad_one(self, z, rel_tol=1e-10):
        lo, hi = min(z, self.z0), max(z, self.z0)
        probes = np.linspace(lo, hi, 257)
        if np.min(np.abs(self.sigma(probes))) < 1e-14:
            raise SingularIntegrand(
                f"sigma vanishes on [{lo:.6g}, {hi:.6g}]")
        val, _ = quad(lambda w: 1.0 / self.sigma(w), self.z0, z,
                      epsrel=rel_tol, limit=200)
        return val


def scale_eval(scale, z):
    return scale(z)


# ----------------------------------------------------------------------
# norm trajectories
# ----------------------------------------------------------------------
@dataclass
class NormTrajectory:
    times: np.ndarray
    l1: np.ndarray        # (R, T)
    l2sq: np.ndarray
    sup: np.ndarray
    negfrac: np.ndarray

    @staticmethod
    def from_result(res):
        return NormTrajectory(times=res.times, l1=res.series["l1"],
                              l2sq=res.series["l2sq"], sup=res.series["sup"],
                              negfrac=res.series["negfrac"])

    def chain_violation(self, rel_slack=1e-12):
        """Worst violation of sup^2 <= l2^2 <= sup * l1 over replicas/times."""
        a = self.sup ** 2 - self.l2sq * (1 + rel_slack)
        b = self.l2sq - self.sup * self.l1 * (1 + rel_slack)
        return float(max(a.max(initial=-math.inf), b.max(initial=-math.inf)))


# ----------------------------------------------------------------------
# one-sample Kolmogorov-Smirnov
# ----------------------------------------------------------------------
def standard_normal_cdf(x):
    return 0.5 * (1.0 + np.vectorize(math.erf)(np.asarray(x) / math.sqrt(2.0)))


def ks_statistic(sample, cdf=standard_normal_cdf):
    """sup-distance between the empirical CDF and ``cdf``."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = len(x)
    if n == 0:
        raise ValueError("empty sample")
    f = np.asarray(cdf(x), dtype=float)
    up = np.max(np.arange(1, n + 1) / n - f)
    down = np.max(f - np.arange(0, n) / n)
    return float(max(up, down))


def ks_threshold(n):
    return KS_ASYMPTOTIC_5PCT / math.sqrt(n) * KS_RELAXATION


# ----------------------------------------------------------------------
# the shared local-increment run
# ----------------------------------------------------------------------
@dataclass
class LocalIncrementData:
    """Snapshot values and Brownian window sums for the local tests."""

    t: float
    taus: tuple
    sites: tuple
    u_base: np.ndarray          # (R, m) field at time t
    u_after: dict               # tau -> (R, m)
    b_window: dict              # tau -> (R, m) B increment over [t, t+tau]
    replicas: int
    dt: float
    scheme: str


def local_increment_run(kernel, box, sigma, u0, t, taus, sites, replicas,
                        dt, seed, scheme="euler", threads=1):
    """Simulate once, recording everything the CLT and ratio tests need.

    dt must not exceed min(tau)/20 so the window statistics are resolved.
    """
    taus = tuple(sorted(float(x) for x in taus))
    if dt > min(taus) / 20 + 1e-15:
        raise ValueError(f"dt={dt} exceeds min(tau)/20 = {min(taus)/20:.3g}")
    sites = tuple(tuple(int(c) for c in np.atleast_1d(s)) for s in sites)
    if len(set(sites)) != len(sites):
        raise ValueError("test sites must be distinct")
    snap = (t,) + tuple(t + tau for tau in taus)
    cfg = SolverConfig(dt=dt, horizon=t + taus[-1], scheme=scheme,
                       snapshot_times=snap, marked_sites=sites,
                       record_b_windows=True,
                       observables=("l1", "negfrac"))
    plan = NoisePlan(seed=seed, dt_min=dt)
    res = run_replicated(kernel, box, sigma, u0, cfg, plan, replicas,
                         threads=threads)
    m = len(sites)
    R = replicas
    j0 = res.at_time(t)
    u_base = np.column_stack([res.site_series[s][:, j0] for s in sites])
    u_after, b_window = {}, {}
    for tau in taus:
        j = res.at_time(t + tau)
        u_after[tau] = np.column_stack([res.site_series[s][:, j] for s in sites])
        acc = np.zeros((R, m))
        for w in range(j0, j):
            acc += np.column_stack([res.b_windows[s][:, w] for s in sites])
        b_window[tau] = acc
    return LocalIncrementData(t=float(t), taus=taus, sites=sites,
                              u_base=u_base, u_after=u_after,
                              b_window=b_window, replicas=R, dt=dt,
                              scheme=scheme)


# ----------------------------------------------------------------------
# CLT of scaled increments
# ----------------------------------------------------------------------
@dataclass
class CltTauStats:
    tau: float
    ks_pooled: float
    ks_per_site: tuple
    max_cross_correlation: float
    discard_fraction: float
    n_used: int


@dataclass
class CltReport:
    stats: list
    degenerate: bool
    ks_threshold_pooled: float
    max_discard_fraction: float
    valid: bool

    def ks_sequence(self):
        return [s.ks_pooled for s in self.stats]


def clt_increment_test(data, sigma, z0=1.0):
    """KS statistics of the scale-normalised increments against N(0, 1).

    eta_tau(x) = [S(u_{t+tau}(x)) - S(u_t(x))] / sqrt(tau), pooled over the
    test sites; also reports per-site statistics and the cross-site
    correlations that should vanish as tau decreases.  Replicas touching
    u <= 0 at an evaluation point are discarded and counted.
    """
    if sigma.kind == "linear" and sigma.q == 0.0:
        return CltReport(stats=[], degenerate=True,
                         ks_threshold_pooled=math.nan,
                         max_discard_fraction=0.0, valid=False)
    scale = ScaleFunction(sigma=sigma, z0=z0)
    stats = []
    worst_discard = 0.0
    for tau in data.taus:
        ok = np.all(data.u_base > 0, axis=1) & np.all(data.u_after[tau] > 0, axis=1)
        n_used = int(ok.sum())
        discard = 1.0 - n_used / data.replicas
        worst_discard = max(worst_discard, discard)
        if n_used == 0:
            raise NumericFailure("all replicas discarded in CLT test", tau=tau)
        eta = (scale(data.u_after[tau][ok]) - scale(data.u_base[ok])) / math.sqrt(tau)
        if float(np.std(eta)) < 1e-12:
            return CltReport(stats=[], degenerate=True,
                             ks_threshold_pooled=math.nan,
                             max_discard_fraction=worst_discard, valid=False)
        pooled = ks_statistic(eta.ravel())
        per_site = tuple(ks_statistic(eta[:, j]) for j in range(eta.shape[1]))
        corr = np.corrcoef(eta, rowvar=False)
        off = np.abs(corr[~np.eye(corr.shape[0], dtype=bool)])
        stats.append(CltTauStats(tau=tau, ks_pooled=pooled,
                                 ks_per_site=per_site,
                                 max_cross_correlation=float(off.max()),
                                 discard_fraction=discard, n_used=n_used))
    n_pool = data.replicas * len(data.sites)
    return CltReport(stats=stats, degenerate=False,
                     ks_threshold_pooled=ks_threshold(n_pool),
                     max_discard_fraction=worst_discard,
                     valid=worst_discard < CLT_MAX_DISCARD_FRACTION)


# ----------------------------------------------------------------------
# increment / noise ratio test
# ----------------------------------------------------------------------
@dataclass
class RatioTauStats:
    tau: float
    exceedance: float
    discard_fraction: float
    n_used: int


@dataclass
class RatioReport:
    eta: float
    stats: list

    def exceedances(self):
        return [s.exceedance for s in self.stats]

    def strictly_decreasing(self):
        e = self.exceedances()
        return all(a > b for a, b in zip(e, e[1:]))


def rn_ratio_test(data, sigma, eta=RN_ETA_DEFAULT):
    """Exceedance of |increment ratio - sigma(u_t)| over the tau ladder.

    R(tau) = [u_{t+tau} - u_t] / [B_{t+tau} - B_t] converges to sigma(u_t)
    in probability; the exceedance probability at the relative tolerance
    ``eta`` must fall as tau shrinks.  Windows with |dB| below 1e-12 are
    discarded and counted.
    """
    stats = []
    for tau in sorted(data.taus, reverse=True):
        db = data.b_window[tau]
        ok = np.abs(db) > RN_MIN_DB
        n_used = int(ok.sum())
        discard = 1.0 - n_used / db.size
        ratio = (data.u_after[tau][ok] - data.u_base[ok]) / db[ok]
        target = sigma(data.u_base[ok])
        exceed = np.abs(ratio - target) > eta * (1.0 + np.abs(target))
        stats.append(RatioTauStats(tau=tau, exceedance=float(exceed.mean()),
                                   discard_fraction=discard, n_used=n_used))
    return RatioReport(eta=eta, stats=stats)


# ----------------------------------------------------------------------
# iterated-logarithm envelope export (qualitative; no pass/fail)
# ----------------------------------------------------------------------
def lil_envelope_export(kernel, box, sigma, u0, t, tau_max, dt, site, seed,
                        scheme="euler"):
    """Rows (tau, |increment|, running max, sigma(u_t) envelope).

    The envelope is |sigma(u_t(x))| sqrt(2 tau log log (1/tau)); rates this
    slow are invisible at desk scale, so this is plot data only.
    """
    site = tuple(int(c) for c in np.atleast_1d(site))
    n = int(round(tau_max / dt))
    snap = tuple(t + j * dt for j in range(n + 1))
    cfg = SolverConfig(dt=dt, horizon=t + tau_max, scheme=scheme,
                       snapshot_times=snap, marked_sites=(site,),
                       observables=("l1",))
    plan = NoisePlan(seed=seed, dt_min=dt)
    res = run_replicated(kernel, box, sigma, u0, cfg, plan, 1)
    series = res.site_series[site][0]
    base = series[0]
    rows = []
    running = 0.0
    s0 = abs(float(sigma(base)))
    for j in range(1, n + 1):
        tau = j * dt
        inc = abs(float(series[j] - base))
        running = max(running, inc)
        env = (s0 * math.sqrt(2 * tau * math.log(math.log(1.0 / tau)))
               if tau < 1.0 / math.e else math.nan)
        rows.append((tau, inc, running, env))
    return np.array(rows)


# ----------------------------------------------------------------------
# dissipation experiment
# ----------------------------------------------------------------------
@dataclass
class DissipationReport:
    norms: NormTrajectory
    mean_l1: np.ndarray
    mean_l2sq: np.ndarray
    mean_sup: np.ndarray
    se_l1: np.ndarray
    fit_slope: float
    fit_ci: tuple
    fit_window: tuple
    target_exponent: float
    warnings: list


def dissipation_experiment(kernel, box, sigma, u0_profile, horizon, dt,
                           replicas, seed, scheme="split-exact-linear",
                           fit_window=None, record_times=None, threads=1,
                           n_boot=200):
    """Track norm decay for a summable initial profile on a transient walk.

    Fits the log-log slope of the Monte Carlo mean of ||u_t||^2 over the
    tail window (default [10, horizon] clipped to the wrap-safe bound) and
    reports it against the local-CLT target d/2.  A horizon beyond the
    wrap-safe bound only attaches a warning; the fit window is clipped.
    """
    if not kernel.symmetrized_transient:
        raise ValueError("dissipation experiment requires a transient kernel")
    u0_profile.finite_support(kernel.dim)   # enforces summability
    if record_times is None:
        record_times = tuple(float(s) for s in
                             sorted({0.0, 1.0, *np.arange(2.0, horizon + 1e-9, 2.0),
                                     horizon}))
    cfg = SolverConfig(dt=dt, horizon=horizon, scheme=scheme,
                       snapshot_times=record_times)
    plan = NoisePlan(seed=seed, dt_min=dt)
    res = run_replicated(kernel, box, sigma, u0_profile.build(box), cfg, plan,
                         replicas, threads=threads)
    norms = NormTrajectory.from_result(res)
    mean_l1 = norms.l1.mean(axis=0)
    mean_l2 = norms.l2sq.mean(axis=0)
    mean_sup = norms.sup.mean(axis=0)
    se_l1 = norms.l1.std(axis=0, ddof=1) / math.sqrt(replicas)

    safe = box.wrap_safe_horizon(kernel)
    if fit_window is None:
        fit_window = (DECAY_FIT_T_MIN, min(horizon, safe))
    lo = max(fit_window[0], DECAY_FIT_T_MIN)
    hi = min(fit_window[1], safe, horizon)
    mask = (norms.times >= lo - 1e-9) & (norms.times <= hi + 1e-9)
    if mask.sum() < 4:
        raise ValueError("fit window too short for a slope estimate")
    log_t = np.log(norms.times[mask])
    slope = float(np.polyfit(log_t, np.log(mean_l2[mask]), 1)[0])
    rng = bootstrap_rng(seed, stream=1)
    boots = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng.integers(0, replicas, size=replicas)
        mb = norms.l2sq[idx][:, mask].mean(axis=0)
        boots[b] = np.polyfit(log_t, np.log(mb), 1)[0]
    ci = (float(np.percentile(boots, 2.5)), float(np.percentile(boots, 97.5)))
    return DissipationReport(norms=norms, mean_l1=mean_l1, mean_l2sq=mean_l2,
                             mean_sup=mean_sup, se_l1=se_l1,
                             fit_slope=slope, fit_ci=ci,
                             fit_window=(lo, hi),
                             target_exponent=kernel.dim / 2.0,
                             warnings=list(res.warnings))


# ----------------------------------------------------------------------
# disorder-regime classification
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class RegimeReport:
    label: str
    lip_criterion: float        # lip^2 * green(0)
    ell_criterion: float        # ell^2 * green(0)
    green_zero: float
    growth_rate_lower: float    # positive root of ell^2 green(beta) = 1, if any


def regime_classify(lip, ell, kernel):
    """Dissipative vs growth classification from the zero-beta Green value.

    lip^2 G(0) < 1 certifies dissipation of summable profiles; ell^2 G(0)
    >= 1 certifies unbounded second moments.  Both cannot hold at once
    since ell <= lip.  A recurrent symmetrized walk admits no dissipation
    criterion at all.
    """
    if ell > lip + 1e-12:
        raise ValueError("ell cannot exceed lip")
    g0 = kernel.coincidence_green(0.0)
    if math.isinf(g0):
        return RegimeReport(label="no-dissipation-criterion (recurrent symmetrized walk)",
                            lip_criterion=math.inf, ell_criterion=math.inf,
                            green_zero=math.inf, growth_rate_lower=math.nan)
    lip_c = lip ** 2 * g0
    ell_c = ell ** 2 * g0
    if lip_c < 1.0:
        label = "dissipative-bound"
        beta_star = 0.0
    elif ell_c >= 1.0:
        label = "growth-bound"
        beta_star = critical_beta(kernel, ell) if ell_c > 1.0 else 0.0
    else:
        label = "indeterminate"
        beta_star = 0.0
    return RegimeReport(label=label, lip_criterion=lip_c, ell_criterion=ell_c,
                        green_zero=g0, growth_rate_lower=beta_star)
