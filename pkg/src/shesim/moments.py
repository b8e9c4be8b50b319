"""Moment estimation three ways: field Monte Carlo, particle (Feynman-Kac)
Monte Carlo for the linear model, and an exact renewal-equation second
moment, plus Lyapunov-exponent fitting and the k^2 bound report.

For linear sigma(u) = q u, the k-th moment has the particle representation

    E |v_t(x)|^k = E[ prod_j u0(X^(j)_t + x) * exp(q^2 * sum_{i<j} C_ij) ]

over k independent walks, where C_ij is the pairwise coincidence time
int_0^t 1{X^(i)_s = X^(j)_s} ds.  Coincidence times are computed exactly by
merging the two jump-time sequences; there is no time discretization in
this estimator.  (The q^2 pair weight is the one consistent with the Ito
isometry; it is cross-checked against the field simulation and the renewal
identity by the acceptance suite.)
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericFailure
from .noise import walk_rng, bootstrap_rng
from .renewal import RenewalProblem, picard_solve
from .walkkernel import smoothed_profile_l2

_COORD_OFF = np.int64(1) << np.int64(20)
_COORD_BASE = np.int64(1) << np.int64(21)


@dataclass(frozen=True)
class MomentEstimate:
    k: int
    t: float
    x: tuple
    estimate: float
    se: float
    replicas: int
    method: str

    def __post_init__(self):
        if self.se < 0:
            raise ValueError("standard error must be nonnegative")


@dataclass(frozen=True)
class CollisionRecord:
    """k walk paths and their pairwise coincidence times on [0, t]."""

    horizon: float
    paths: tuple
    overlap: np.ndarray     # (k, k) symmetric, zero diagonal by convention

    def total_weight_exponent(self, ell):
        iu = np.triu_indices(self.overlap.shape[0], k=1)
        return float(ell ** 2 * self.overlap[iu].sum())


def jackknife_se(samples):
    """Leave-one-out standard error of the sample mean."""
    samples = np.asarray(samples, dtype=float)
    n = len(samples)
    if n < 2:
        return 0.0
    total = samples.sum()
    loo = (total - samples) / (n - 1)
    return float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))


def estimate_field_moment(result, k, t, x, method="field-mc"):
    """Sample mean of |u_t(x)|^k over the replicas of a simulation result."""
    if k < 1:
        raise ValueError("k must be >= 1")
    x = tuple(int(c) for c in np.atleast_1d(x))
    if x not in result.site_series:
        raise ValueError(f"site {x} was not marked in the run")
    try:
        j = result.at_time(t)
    except ValueError as exc:
        raise ValueError(f"t={t} is not a snapshot time") from exc
    samples = np.abs(result.site_series[x][:, j]) ** k
    return MomentEstimate(k=int(k), t=float(t), x=x,
                          estimate=float(samples.mean()),
                          se=jackknife_se(samples),
                          replicas=len(samples), method=method)


# ----------------------------------------------------------------------
# exact pairwise coincidence times
# ----------------------------------------------------------------------
def _overlap_merge_py(ta, ca, tb, cb, horizon):
    ia = ib = 0
    na, nb = len(ta), len(tb)
    t_prev = 0.0
    acc = 0.0
    while True:
        nxt_a = ta[ia] if ia < na else math.inf
        nxt_b = tb[ib] if ib < nb else math.inf
        t_next = min(nxt_a, nxt_b, horizon)
        if ca[ia] == cb[ib]:
            acc += t_next - t_prev
        t_prev = t_next
        if t_next >= horizon:
            return acc
        if nxt_a <= nxt_b:
            ia += 1
        else:
            ib += 1


try:
    from numba import njit

    _overlap_merge = njit(cache=True)(_overlap_merge_py)

    @njit(cache=True)
    def _pair_overlaps(times, codes, offsets, horizon, kk, out):  # pragma: no cover - numba
        n = out.shape[0]
        npairs = out.shape[1]
        for r in range(n):
            p = 0
            for i in range(kk):
                ai, bi = offsets[r * kk + i], offsets[r * kk + i + 1]
                for j in range(i + 1, kk):
                    aj, bj = offsets[r * kk + j], offsets[r * kk + j + 1]
                    ia = ai
                    ib = aj
                    t_prev = 0.0
                    acc = 0.0
                    while True:
                        nxt_a = times[ia] if ia < bi - 1 else math.inf
                        nxt_b = times[ib] if ib < bj - 1 else math.inf
                        t_next = min(min(nxt_a, nxt_b), horizon)
                        if codes[ia] == codes[ib]:
                            acc += t_next - t_prev
                        t_prev = t_next
                        if t_next >= horizon:
                            break
                        if nxt_a <= nxt_b:
                            ia += 1
                        else:
                            ib += 1
                    out[r, p] = acc
                    p += 1
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _overlap_merge = _overlap_merge_py
    _HAVE_NUMBA = False


def collision_record(paths, horizon):
    """Exact pairwise coincidence times for a tuple of WalkPath objects."""
    kk = len(paths)
    overlap = np.zeros((kk, kk))
    for i in range(kk):
        for j in range(i + 1, kk):
            pa, pb = paths[i], paths[j]
            ca = _pack_codes(pa.positions)
            cb = _pack_codes(pb.positions)
            # segment m covers [times[m-1], times[m]); append sentinel code rows
            val = _overlap_merge(pa.times, ca, pb.times, cb, horizon)
            overlap[i, j] = overlap[j, i] = val
    return CollisionRecord(horizon=float(horizon), paths=tuple(paths),
                           overlap=overlap)


def _pack_codes(positions):
    """Injective int64 code per lattice position (coords below 2^20)."""
    pos = np.asarray(positions, dtype=np.int64)
    code = np.zeros(len(pos), dtype=np.int64)
    for k in range(pos.shape[1]):
        code = code * _COORD_BASE + (pos[:, k] + _COORD_OFF)
    return code


class _PathBatch:
    """n replicas x k independent walks, sampled in bulk.

    Per path p the slot range code_offsets[p] .. code_offsets[p+1]-1 holds
    the position code of each constant segment (origin first); the aligned
    times array holds the jump time that ends each segment, with +inf in
    the final slot.
    """

    def __init__(self, kernel, t, k, n, seed, stream=0):
        rng = walk_rng(seed, stream)
        d = kernel.dim
        npaths = n * k
        if t > 0:
            counts = rng.poisson(kernel.rate * t, size=npaths).astype(np.int64)
        else:
            counts = np.zeros(npaths, dtype=np.int64)
        total = int(counts.sum())
        offsets_j = np.zeros(npaths + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets_j[1:])
        path_of = np.repeat(np.arange(npaths), counts)
        raw_times = rng.uniform(0.0, t, size=total)
        order = np.lexsort((raw_times, path_of))
        times = raw_times[order]
        vecs = np.asarray(kernel.jumps.vectors, dtype=np.int64)
        masses = np.asarray(kernel.jumps.masses)
        steps = vecs[rng.choice(len(vecs), size=total, p=masses)]
        # positions after each jump: global cumsum minus the path's base
        cumpos = np.cumsum(steps, axis=0, dtype=np.int64)
        starts = offsets_j[:-1]
        prev = np.zeros((npaths, d), dtype=np.int64)
        started = starts > 0
        prev[started] = cumpos[starts[started] - 1]
        pos_after = cumpos - np.repeat(prev, counts, axis=0)

        code_offsets = offsets_j + np.arange(npaths + 1, dtype=np.int64)
        codes = np.empty(total + npaths, dtype=np.int64)
        seg_times = np.empty(total + npaths)
        origin_code = int(_pack_codes(np.zeros((1, d), np.int64))[0])
        codes[code_offsets[:-1]] = origin_code
        seg_times[code_offsets[1:] - 1] = math.inf
        if total:
            jump_slot = np.arange(total) + path_of  # sorted path_of
            codes[jump_slot + 1] = _pack_codes(pos_after)
            seg_times[jump_slot] = times
        final_pos = np.zeros((npaths, d), dtype=np.int64)
        has = counts > 0
        final_pos[has] = pos_after[offsets_j[1:][has] - 1]

        self.horizon = float(t)
        self.n = n
        self.k = k
        self.codes = codes
        self.seg_times = seg_times
        self.code_offsets = code_offsets
        self.final_pos = final_pos.reshape(n, k, d)

    def pair_overlaps(self):
        """(n, k*(k-1)/2) exact coincidence times, pairs in (i<j) order."""
        npairs = self.k * (self.k - 1) // 2
        out = np.zeros((self.n, npairs))
        if npairs == 0:
            return out
        if _HAVE_NUMBA:
            _pair_overlaps(self.seg_times, self.codes, self.code_offsets,
                           self.horizon, self.k, out)
        else:
            for r in range(self.n):
                p = 0
                for i in range(self.k):
                    for j in range(i + 1, self.k):
                        out[r, p] = self._overlap_one(r, i, j)
                        p += 1
        return out

    def _overlap_one(self, r, i, j):
        pi, pj = r * self.k + i, r * self.k + j
        a_lo, a_hi = self.code_offsets[pi], self.code_offsets[pi + 1]
        b_lo, b_hi = self.code_offsets[pj], self.code_offsets[pj + 1]
        return _overlap_merge(self.seg_times[a_lo:a_hi - 1],
                              self.codes[a_lo:a_hi],
                              self.seg_times[b_lo:b_hi - 1],
                              self.codes[b_lo:b_hi], self.horizon)


def _mc_estimate(weights):
    m = float(weights.mean())
    se = float(weights.std(ddof=1) / math.sqrt(len(weights))) if len(weights) > 1 else 0.0
    return m, se


def fk_pam_moment(kernel, q, profile, k, t, x, replicas, seed=0, stream=0):
    """Particle estimate of E|v_t(x)|^k for the linear model sigma(u) = qu.

    ``profile`` supplies the initial condition on the whole lattice.
    Coincidence times are exact; the estimator has zero variance when the
    initial profile is constant and q = 0.
    """
    if int(k) != k or k < 1:
        raise ValueError("k must be a positive integer")
    k = int(k)
    x = tuple(int(c) for c in np.atleast_1d(x))
    batch = _PathBatch(kernel, t, k, replicas, seed, stream)
    if k >= 2:
        exponent = (q * q) * batch.pair_overlaps().sum(axis=1)
        weights = np.exp(exponent)
    else:
        weights = np.ones(replicas)
    for j in range(k):
        endpoints = batch.final_pos[:, j, :] + np.asarray(x, dtype=np.int64)
        weights = weights * profile.lookup_many(endpoints)
    est, se = _mc_estimate(weights)
    return MomentEstimate(k=k, t=float(t), x=x, estimate=est, se=se,
                          replicas=replicas, method="feynman-kac")


def fk_pam_l2_delta(kernel, q, t, replicas, amplitude=1.0, seed=0, stream=0):
    """Particle estimate of sum_x E|v_t(x)|^2 for u0 = amplitude * delta_0.

    The sum over x collapses to 1{X_t = X'_t} exp(q^2 * coincidence time).
    """
    batch = _PathBatch(kernel, t, 2, replicas, seed, stream)
    same_end = np.all(batch.final_pos[:, 0, :] == batch.final_pos[:, 1, :], axis=1)
    exponent = (q * q) * batch.pair_overlaps()[:, 0]
    weights = amplitude ** 2 * same_end * np.exp(exponent)
    est, se = _mc_estimate(weights)
    return MomentEstimate(k=2, t=float(t), x=("sum",), estimate=est, se=se,
                          replicas=replicas, method="feynman-kac")


# ----------------------------------------------------------------------
# renewal second-moment oracle
# ----------------------------------------------------------------------
@dataclass
class SecondMomentCurve:
    times: np.ndarray
    values: np.ndarray
    dt: float
    halving_error: float

    def at(self, t):
        j = int(round(t / self.dt))
        if abs(j * self.dt - t) > 1e-9:
            raise ValueError(f"t={t} is not on the oracle grid")
        return float(self.values[j])


def pam_second_moment_renewal(kernel, q, profile, horizon, dt=1.0 / 512,
                              tol=1e-4):
    """Exact E ||u_t||_{l^2}^2 for the linear model via the renewal identity

        F(t) = ||semigroup_t u0||^2 + q^2 int_0^t coincidence(t-s) F(s) ds,

    solved on a uniform grid; the reported error is the grid-halving
    difference (second-order scheme), and exceeding ``tol`` is a failure.
    """
    sites, vals = profile.finite_support(kernel.dim)
    curves = {}
    for step in (dt, dt / 2):
        n = int(round(horizon / step))
        ts = step * np.arange(n + 1)
        g = smoothed_profile_l2(kernel, sites, vals, ts)
        pb, _ = kernel.coincidence_curve(ts)
        rep = picard_solve(RenewalProblem(dt=step, g=g, h=q * q * pb))
        curves[step] = rep.f
    err = float(np.max(np.abs(curves[dt] - curves[dt / 2][::2])))
    if err > tol:
        raise NumericFailure("renewal grid too coarse", halving_error=err,
                             tol=tol)
    n = int(round(horizon / dt))
    return SecondMomentCurve(times=dt * np.arange(n + 1), values=curves[dt],
                             dt=dt, halving_error=err)


# ----------------------------------------------------------------------
# Lyapunov fits and the k^2 bound report
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class LyapunovFit:
    slope: float
    ci_low: float
    ci_high: float
    window: tuple
    n_points: int


def fit_lyapunov(times, log_moments, window=None, n_boot=1000, seed=0):
    """Least-squares growth rate of log-moments over a time window with a
    pairs-bootstrap confidence interval."""
    times = np.asarray(times, dtype=float)
    logm = np.asarray(log_moments, dtype=float)
    if window is not None:
        mask = (times >= window[0]) & (times <= window[1])
        times, logm = times[mask], logm[mask]
    if len(times) < 4:
        raise ValueError("need at least 4 points in the fit window")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    if np.ptp(times) <= 0:
        raise ValueError("degenerate window")
    slope = float(np.polyfit(times, logm, 1)[0])
    rng = bootstrap_rng(seed)
    n = len(times)
    boots = np.empty(n_boot)
    for b in range(n_boot):
        idx = np.sort(rng.integers(0, n, size=n))
        if np.ptp(times[idx]) <= 0:
            boots[b] = slope
            continue
        boots[b] = np.polyfit(times[idx], logm[idx], 1)[0]
    lo, hi = np.percentile(boots, [2.5, 97.5])
    return LyapunovFit(slope=slope, ci_low=float(lo), ci_high=float(hi),
                       window=(float(times[0]), float(times[-1])),
                       n_points=n)


@dataclass(frozen=True)
class BoundVerdict:
    k: int
    verdict: str        # within-bounds | violates-upper | violates-lower | k-below-threshold
    upper_bound: float
    lower_bound: float
    k_threshold: float
    estimate: float
    ci: tuple


def check_k2_bounds(fits, lip, ell, eps):
    """Per-k verdicts against the quadratic moment-growth bounds.

    Upper bound 8 * lip^2 * k^2 applies to every k; the lower bound
    (1 - eps) * ell^2 * k^2 is asserted only for k >= 1/eps + 1/(eps ell^2).
    A fit whose CI upper limit exceeds the upper bound is flagged, as is a
    fit whose CI lies entirely below an asserted lower bound.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must be in (0, 1)")
    threshold = 1.0 / eps + (1.0 / (eps * ell ** 2) if ell > 0 else math.inf)
    out = []
    for k in sorted(fits):
        fit = fits[k]
        est, lo, hi = fit.slope, fit.ci_low, fit.ci_high
        upper = 8.0 * lip ** 2 * k ** 2
        lower = (1.0 - eps) * ell ** 2 * k ** 2
        if hi > upper:
            verdict = "violates-upper"
        elif k < threshold:
            verdict = "k-below-threshold"
        elif hi < lower:
            verdict = "violates-lower"
        else:
            verdict = "within-bounds"
        out.append(BoundVerdict(k=int(k), verdict=verdict, upper_bound=upper,
                                lower_bound=lower, k_threshold=threshold,
                                estimate=est, ci=(lo, hi)))
    return out
