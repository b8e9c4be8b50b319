"""Time stepping for the interacting-diffusion system on a finite box.

du_t(x) = (L u_t)(x) dt + sigma(u_t(x)) dB_t(x)

with L the walk generator, truncated to a periodic or frozen-boundary box.
Two schemes: explicit Euler-Maruyama, and for linear sigma a Lie split with
an exact geometric noise factor (positivity preserving while the drift
stencil I + dt*L stays monotone, i.e. dt <= 1).  Noise comes exclusively
from a NoisePlan, so trajectories are reproducible from (seed, replica)
and identical Brownian paths can be shared across step sizes and coupled
runs.  Negative sites produced by Euler are counted (negativity fraction),
never clamped; clamping would bias moments.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericFailure

_REGISTRY = {}


def register_nonlinearity(name, fn, lip, ell):
    _REGISTRY[name] = (fn, float(lip), float(ell))


def _saturating(z):
    return z / (1.0 + np.abs(z))


def _steep_saturating(z):
    return 12.0 * z / (1.0 + np.abs(z))


register_nonlinearity("saturating", _saturating, 1.0, 0.0)
register_nonlinearity("steep-saturating", _steep_saturating, 12.0, 0.0)


@dataclass(frozen=True)
class Nonlinearity:
    """Noise coefficient sigma with its declared slope constants.

    ``lip`` is the best Lipschitz constant, ``ell`` the infimum of
    |sigma(z)/z|; both are declared (they cannot be computed from a black
    box) and sanity-checked by ``validate_sampled``.  sigma(0) = 0 always.
    """

    kind: str                 # "linear" | "custom"
    lip: float
    ell: float
    q: float = 0.0
    fn: object = None
    name: str = ""

    @staticmethod
    def linear(q):
        q = float(q)
        if q < 0:
            raise ValueError("q must be nonnegative")
        return Nonlinearity(kind="linear", lip=q, ell=q, q=q, name=f"linear({q})")

    @staticmethod
    def zero():
        return Nonlinearity.linear(0.0)

    @staticmethod
    def custom(fn, lip, ell, name="custom"):
        return Nonlinearity(kind="custom", lip=float(lip), ell=float(ell),
                            fn=fn, name=name)

    @staticmethod
    def named(name):
        fn, lip, ell = _REGISTRY[name]
        return Nonlinearity(kind="custom", lip=lip, ell=ell, fn=fn, name=name)

    def __call__(self, z):
        if self.kind == "linear":
            return self.q * z
        return self.fn(z)

    def validate_sampled(self, rng, n=256, tol=1e-12):
        """Numeric spot checks of sigma(0) = 0 and the declared slopes."""
        if abs(float(self(0.0))) > tol:
            raise ValueError("sigma(0) != 0")
        a = rng.uniform(-10, 10, size=n)
        b = rng.uniform(-10, 10, size=n)
        mask = a != b
        lhs = np.abs(self(a[mask]) - self(b[mask]))
        if np.any(lhs > self.lip * np.abs(a[mask] - b[mask]) + tol):
            raise ValueError("sampled slope exceeds declared lip")
        z = rng.uniform(-10, 10, size=n)
        z = z[z != 0]
        if np.any(np.abs(self(z)) < self.ell * np.abs(z) - tol):
            raise ValueError("sampled |sigma(z)| below declared ell*|z|")


@dataclass(frozen=True)
class Box:
    """Finite truncation window with a boundary policy.

    Site coordinates run over the origin-centred ranges
    [-(e_k // 2), e_k - 1 - e_k // 2]; the canonical linear index is the
    C-order position in that window (this index also keys the noise).
    """

    extents: tuple
    boundary: str = "periodic"

    def __post_init__(self):
        ext = tuple(int(e) for e in self.extents)
        if not ext or any(e < 1 for e in ext):
            raise ValueError("extents must be positive")
        if self.boundary not in ("periodic", "frozen"):
            raise ValueError("boundary must be 'periodic' or 'frozen'")
        object.__setattr__(self, "extents", ext)

    @property
    def dim(self):
        return len(self.extents)

    @property
    def nsites(self):
        return int(np.prod(self.extents))

    @property
    def los(self):
        return tuple(-(e // 2) for e in self.extents)

    def index_of(self, site):
        site = tuple(int(c) for c in np.atleast_1d(site))
        idx = []
        for k, c in enumerate(site):
            j = c - self.los[k]
            if not 0 <= j < self.extents[k]:
                raise ValueError(f"site {site} outside box")
            idx.append(j)
        return int(np.ravel_multi_index(idx, self.extents))

    def coords(self):
        """(nsites, dim) array of site coordinates in canonical order."""
        grids = np.meshgrid(*[np.arange(lo, lo + e) for lo, e in
                              zip(self.los, self.extents)], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def validate_for_kernel(self, kernel):
        r = kernel.jumps.max_jump_norm
        if self.boundary == "periodic" and r > 0:
            if min(self.extents) < 3 * r:
                raise ValueError(
                    f"periodic extents {self.extents} below 3 * max jump {r}")

    def wrap_safe_horizon(self, kernel):
        r = kernel.jumps.max_jump_norm
        if r == 0:
            return math.inf
        return (min(self.extents) / (2.0 * r)) ** 2


@dataclass
class FieldState:
    box: Box
    time: float
    values: np.ndarray

    def negativity_fraction(self):
        return float(np.mean(self.values < 0))


@dataclass(frozen=True)
class ProfileSpec:
    """Initial profile defined on the whole lattice.

    kind "constant": value everywhere; "delta": value at the origin;
    "table": explicit (site, value) pairs, zero elsewhere.
    """

    kind: str
    value: float = 1.0
    table: tuple = ()

    def __post_init__(self):
        if self.kind not in ("constant", "delta", "table"):
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.kind == "table":
            tab = tuple((tuple(int(c) for c in np.atleast_1d(s)), float(v))
                        for s, v in self.table)
            object.__setattr__(self, "table", tab)

    def build(self, box):
        if self.kind == "constant":
            return profile_constant(box, self.value)
        if self.kind == "delta":
            return profile_delta(box, self.value)
        return profile_from_table(box, dict(self.table))

    def lookup_many(self, points):
        """Values at (n, d) lattice points of the untruncated profile."""
        points = np.asarray(points, dtype=np.int64)
        if self.kind == "constant":
            return np.full(len(points), self.value)
        if self.kind == "delta":
            return self.value * np.all(points == 0, axis=1).astype(float)
        out = np.zeros(len(points))
        lut = dict(self.table)
        for i, p in enumerate(points):
            out[i] = lut.get(tuple(int(c) for c in p), 0.0)
        return out

    def finite_support(self, dim=1):
        """(sites, values) pairs; rejects profiles outside l^1."""
        if self.kind == "constant":
            if self.value != 0.0:
                raise ValueError("constant profile is not summable")
            return [(0,) * dim], np.array([0.0])
        if self.kind == "delta":
            return [(0,) * dim], np.array([self.value])
        sites = [s for s, _ in self.table]
        vals = np.array([v for _, v in self.table])
        return sites, vals

    def l1_norm(self, dim=1):
        _, vals = self.finite_support(dim)
        return float(np.abs(vals).sum())


def profile_delta(box, amplitude=1.0):
    u = np.zeros(box.extents)
    u[tuple(-lo for lo in box.los)] = amplitude
    return u


def profile_constant(box, value):
    return np.full(box.extents, float(value))


def profile_from_table(box, table):
    u = np.zeros(box.extents)
    for site, v in table.items():
        site = tuple(int(c) for c in np.atleast_1d(site))
        u[tuple(c - lo for c, lo in zip(site, box.los))] = float(v)
    return u


# ----------------------------------------------------------------------
# generator application
# ----------------------------------------------------------------------
def _stencil(kernel):
    return [(tuple(-c for c in v), m) for v, m in
            zip(kernel.jumps.vectors, kernel.jumps.masses)]


def _drift_periodic(batch, kernel, stencil):
    """rate * (sum_z m_z f(x + z) - f(x)) on (R, *extents) arrays."""
    axes = tuple(range(1, batch.ndim))
    acc = np.zeros_like(batch)
    for shift, m in stencil:
        acc += m * np.roll(batch, shift, axis=axes)
    acc -= batch
    acc *= kernel.rate
    return acc


class _FrozenDrift:
    """Drift with the exterior pinned to a fixed extension field."""

    def __init__(self, kernel, box, exterior_fn):
        self.kernel = kernel
        self.pad = kernel.jumps.max_jump_norm
        self.box = box
        ext = [e + 2 * self.pad for e in box.extents]
        self.frame = np.zeros(ext)
        for idx in np.ndindex(*ext):
            site = tuple(idx[k] - self.pad + box.los[k] for k in range(box.dim))
            self.frame[idx] = exterior_fn(site)
        self.core = tuple(slice(self.pad, self.pad + e) for e in box.extents)

    def __call__(self, batch):
        R = batch.shape[0]
        padded = np.broadcast_to(self.frame, (R,) + self.frame.shape).copy()
        padded[(slice(None),) + self.core] = batch
        acc = np.zeros_like(batch)
        for v, m in zip(self.kernel.jumps.vectors, self.kernel.jumps.masses):
            sl = tuple(slice(self.pad + v[k], self.pad + v[k] + self.box.extents[k])
                       for k in range(self.box.dim))
            acc += m * padded[(slice(None),) + sl]
        acc -= batch
        acc *= self.kernel.rate
        return acc


def generator_apply(box, kernel, values):
    """(L f)(x) on the box; linear, kills constants, conserves mass on a
    periodic box."""
    values = np.asarray(values, dtype=float)
    if values.shape != box.extents:
        raise ValueError("field shape does not match box")
    if box.boundary == "periodic":
        return _drift_periodic(values[None], kernel, _stencil(kernel))[0]
    drift = _FrozenDrift(kernel, box, lambda site: 0.0)
    return drift(values[None])[0]


# ----------------------------------------------------------------------
# single steps (spec-level operations; the batch engine uses the same math)
# ----------------------------------------------------------------------
def em_step(state, kernel, sigma, dt, d_b):
    """Explicit Euler-Maruyama step; aborts on a non-finite value."""
    u = state.values
    new = u + dt * generator_apply(state.box, kernel, u) + sigma(u) * d_b
    if not np.all(np.isfinite(new)):
        bad = np.argwhere(~np.isfinite(new))[0]
        site = tuple(int(b) + lo for b, lo in zip(bad, state.box.los))
        raise NumericFailure("non-finite field value", site=site,
                             time=state.time + dt)
    return FieldState(box=state.box, time=state.time + dt, values=new)


def split_step_linear(state, kernel, sigma, dt, d_b):
    """Drift half-step then exact geometric noise factor (linear sigma only).

    Preserves nonnegativity whenever dt <= 1 keeps I + dt*L monotone.
    """
    if sigma.kind != "linear":
        raise ValueError("split-exact-linear requires a linear nonlinearity")
    u = state.values
    v = u + dt * generator_apply(state.box, kernel, u)
    q = sigma.q
    new = v * np.exp(q * d_b - 0.5 * q * q * dt)
    return FieldState(box=state.box, time=state.time + dt, values=new)


# ----------------------------------------------------------------------
# batched simulation engine
# ----------------------------------------------------------------------
@dataclass
class SolverConfig:
    dt: float
    horizon: float
    scheme: str = "euler"          # "euler" | "split-exact-linear"
    dt_min: float = None           # noise refinement level; defaults to dt
    snapshot_times: tuple = ()
    observables: tuple = ("l1", "l2sq", "sup", "negfrac")
    marked_sites: tuple = ()
    record_b_windows: bool = False
    keep_snapshots: bool = False
    max_dt_lip2: float = 0.1

    def __post_init__(self):
        if self.dt <= 0 or self.horizon < 0:
            raise ValueError("dt must be positive and horizon nonnegative")
        if self.dt > 1.0:
            raise ValueError("dt > 1 breaks monotonicity of the drift stencil")
        if self.scheme not in ("euler", "split-exact-linear"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.dt_min is None:
            self.dt_min = self.dt
        ratio = self.dt / self.dt_min
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("dt must be an integer multiple of dt_min")
        self.snapshot_times = tuple(float(t) for t in self.snapshot_times)

    @property
    def substeps(self):
        return int(round(self.dt / self.dt_min))

    @property
    def n_steps(self):
        n = int(round(self.horizon / self.dt))
        if abs(n * self.dt - self.horizon) > 1e-9 * max(1.0, self.horizon):
            raise ValueError("horizon must be a multiple of dt")
        return n

    def check_accuracy(self, sigma):
        if self.dt * sigma.lip ** 2 > self.max_dt_lip2 + 1e-12:
            raise ValueError(
                f"dt * lip^2 = {self.dt * sigma.lip**2:.3g} exceeds the "
                f"accuracy budget {self.max_dt_lip2} (configurable)")


@dataclass
class SimResult:
    times: np.ndarray
    replica_ids: np.ndarray
    series: dict                    # observable name -> (R, T)
    site_series: dict               # site tuple -> (R, T)
    b_windows: dict                 # site tuple -> (R, T-1) increment sums
    snapshots: dict                 # time -> (R, *extents)
    warnings: list

    def mean(self, name):
        return self.series[name].mean(axis=0)

    def at_time(self, t):
        j = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[j] - t) > 1e-9:
            raise ValueError(f"t={t} was not recorded")
        return j


def _record(series, site_series, state_flat, box, j, marked_idx, observables):
    if "l1" in series:
        series["l1"][:, j] = np.abs(state_flat).sum(axis=1)
    if "l2sq" in series:
        series["l2sq"][:, j] = (state_flat ** 2).sum(axis=1)
    if "sup" in series:
        series["sup"][:, j] = np.abs(state_flat).max(axis=1)
    if "negfrac" in series:
        series["negfrac"][:, j] = (state_flat < 0).mean(axis=1)
    for site, col in site_series.items():
        col[:, j] = state_flat[:, marked_idx[site]]


def simulate(kernel, box, sigma, u0, config, plan, replica_ids,
             exterior_profile=None):
    """Run a batch of replicas; returns the recorded observable series.

    Fully deterministic from (plan.seed, replica ids, config); replica
    batches may be split arbitrarily across workers without changing any
    number.  On a frozen-boundary box, exterior sites are pinned to
    ``exterior_profile`` (zero off the box when omitted).
    """
    results = _run_batch(kernel, box, sigma, [np.asarray(u0, dtype=float)],
                         config, plan, replica_ids,
                         exterior_profile=exterior_profile)
    return results[0]


def coupled_simulate(kernel, box, sigma, u0, v0, config, plan, replica_ids):
    """Advance two initial profiles under one shared noise stream.

    Returns both results plus ordering diagnostics: the per-step maximum of
    (v - u)_+ and the fraction of sites violating u >= v, per replica.
    """
    u0 = np.asarray(u0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    if np.any(u0 < v0):
        raise ValueError("coupled runs require u0 >= v0 pointwise")
    res_u, res_v, diag = _run_batch(kernel, box, sigma, [u0, v0], config,
                                    plan, replica_ids, couple_diag=True)
    return res_u, res_v, diag


@dataclass
class CouplingDiagnostics:
    step_times: np.ndarray
    max_neg_part: np.ndarray        # (R, n_steps) max over sites of (v-u)_+
    violating_fraction: np.ndarray  # (R, n_steps)

    def worst_violation(self):
        return float(self.max_neg_part.max()) if self.max_neg_part.size else 0.0


def _run_batch(kernel, box, sigma, initials, config, plan, replica_ids,
               couple_diag=False, exterior_profile=None):
    box.validate_for_kernel(kernel)
    config.check_accuracy(sigma)
    if config.scheme == "split-exact-linear" and sigma.kind != "linear":
        raise ValueError("split-exact-linear requires a linear nonlinearity")
    warns = []
    safe = box.wrap_safe_horizon(kernel)
    if config.horizon > safe:
        msg = (f"horizon {config.horizon} exceeds wrap-safe bound {safe:.3g}; "
               "finite box distorts transient-walk quantities")
        warnings.warn(msg)
        warns.append(msg)

    replica_ids = np.asarray(replica_ids, dtype=np.uint64)
    R = len(replica_ids)
    nsites = box.nsites
    ext = box.extents
    n_steps = config.n_steps
    dt = config.dt
    m_sub = config.substeps

    rec_steps = {}
    for t in sorted(set(config.snapshot_times)):
        j = int(round(t / dt))
        if abs(j * dt - t) > 1e-9 or not (0 <= j <= n_steps):
            raise ValueError(f"snapshot time {t} is not on the step grid")
        rec_steps[j] = t
    times = np.array([rec_steps[j] for j in sorted(rec_steps)])
    n_rec = len(times)
    marked_idx = {tuple(int(c) for c in np.atleast_1d(s)): box.index_of(s)
                  for s in config.marked_sites}

    stencil = _stencil(kernel)
    if box.boundary == "frozen":
        # exterior pinned to the initial profile, extended off the box by
        # the supplied lattice-wide profile (zero when none is given)
        u0_grid = initials[0]

        def exterior(site):
            idx = tuple(c - lo for c, lo in zip(site, box.los))
            if all(0 <= i < e for i, e in zip(idx, box.extents)):
                return float(u0_grid[idx])
            if exterior_profile is not None:
                return float(exterior_profile.lookup_many(
                    np.array([site], dtype=np.int64))[0])
            return 0.0
        drift = _FrozenDrift(kernel, box, exterior)
    else:
        def drift(batch):
            return _drift_periodic(batch, kernel, stencil)

    states = [np.broadcast_to(f, (R,) + ext).copy() for f in initials]
    outs = []
    for _ in initials:
        series = {name: np.empty((R, n_rec)) for name in config.observables}
        site_series = {s: np.empty((R, n_rec)) for s in marked_idx}
        bw = ({s: np.zeros((R, max(n_rec - 1, 0))) for s in marked_idx}
              if config.record_b_windows else {})
        snaps = {}
        outs.append((series, site_series, bw, snaps))

    if couple_diag:
        diag_neg = np.zeros((R, n_steps))
        diag_frac = np.zeros((R, n_steps))

    rec_counter = 0
    if 0 in rec_steps:
        for st, (series, site_series, _, snaps) in zip(states, outs):
            flat = st.reshape(R, nsites)
            _record(series, site_series, flat, box, 0, marked_idx,
                    config.observables)
            if config.keep_snapshots:
                snaps[rec_steps[0]] = st.copy()
        rec_counter = 1

    is_linear_split = config.scheme == "split-exact-linear"
    q = sigma.q if sigma.kind == "linear" else None

    for step in range(n_steps):
        d_b = plan.increments(step, m_sub, replica_ids, nsites)
        d_b_grid = d_b.reshape((R,) + ext)
        for fi, st in enumerate(states):
            lu = drift(st)
            if is_linear_split:
                st += dt * lu
                st *= np.exp(q * d_b_grid - 0.5 * q * q * dt)
            else:
                noise = sigma(st) * d_b_grid
                st += dt * lu
                st += noise
            states[fi] = st
        for fi, st in enumerate(states):
            total = float(st.sum())
            if not math.isfinite(total) or not np.all(np.isfinite(st)):
                bad = np.argwhere(~np.isfinite(st))
                r_bad, *site_idx = bad[0]
                site = tuple(int(c) + lo for c, lo in zip(site_idx, box.los))
                raise NumericFailure(
                    "non-finite field value",
                    site=site, step=step + 1,
                    replica=int(replica_ids[int(r_bad)]))
        if couple_diag:
            gap = states[1] - states[0]
            np.maximum(gap, 0.0, out=gap)
            flatgap = gap.reshape(R, nsites)
            diag_neg[:, step] = flatgap.max(axis=1)
            diag_frac[:, step] = (flatgap > 0).mean(axis=1)
        if config.record_b_windows and rec_counter > 0 and rec_counter <= n_rec - 1:
            for (series, site_series, bw, snaps), st in zip(outs, states):
                for s, idx in marked_idx.items():
                    bw[s][:, rec_counter - 1] += d_b[:, idx]
        if (step + 1) in rec_steps:
            for (series, site_series, bw, snaps), st in zip(outs, states):
                flat = st.reshape(R, nsites)
                _record(series, site_series, flat, box, rec_counter,
                        marked_idx, config.observables)
                if config.keep_snapshots:
                    snaps[rec_steps[step + 1]] = st.copy()
            rec_counter += 1

    results = [SimResult(times=times, replica_ids=replica_ids.copy(),
                         series=series, site_series=site_series,
                         b_windows=bw, snapshots=snaps, warnings=list(warns))
               for (series, site_series, bw, snaps) in outs]
    if couple_diag:
        diag = CouplingDiagnostics(
            step_times=dt * np.arange(1, n_steps + 1),
            max_neg_part=diag_neg, violating_fraction=diag_frac)
        return results[0], results[1], diag
    return results


# ----------------------------------------------------------------------
# replica orchestration
# ----------------------------------------------------------------------
REPLICA_CHUNK = 256


def _sim_worker(args):
    kernel, box, sigma, u0, config, plan, ids = args
    return simulate(kernel, box, sigma, u0, config, plan, ids)


def merge_results(parts):
    first = parts[0]
    if len(parts) == 1:
        return first
    return SimResult(
        times=first.times,
        replica_ids=np.concatenate([p.replica_ids for p in parts]),
        series={k: np.concatenate([p.series[k] for p in parts])
                for k in first.series},
        site_series={s: np.concatenate([p.site_series[s] for p in parts])
                     for s in first.site_series},
        b_windows={s: np.concatenate([p.b_windows[s] for p in parts])
                   for s in first.b_windows},
        snapshots={t: np.concatenate([p.snapshots[t] for p in parts])
                   for t in first.snapshots},
        warnings=first.warnings)


def run_replicated(kernel, box, sigma, u0, config, plan, n_replicas,
                   threads=1, replica_offset=0):
    """Simulate ``n_replicas`` replicas, optionally on a process pool.

    The replica set is split into fixed-size chunks independent of the pool
    size, and every increment is counter-keyed, so results are identical at
    any thread count.
    """
    u0 = np.asarray(u0, dtype=float)
    ids = np.arange(replica_offset, replica_offset + n_replicas,
                    dtype=np.uint64)
    chunks = [ids[i:i + REPLICA_CHUNK]
              for i in range(0, n_replicas, REPLICA_CHUNK)]
    if threads > 1 and len(chunks) > 1:
        from concurrent.futures import ProcessPoolExecutor
        jobs = [(kernel, box, sigma, u0, config, plan, c) for c in chunks]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_sim_worker, jobs))
    else:
        parts = [simulate(kernel, box, sigma, u0, config, plan, c)
                 for c in chunks]
    return merge_results(parts)


# ----------------------------------------------------------------------
# discrete mild-solution (Picard) oracle
# ----------------------------------------------------------------------
def picard_mild_solve(kernel, sigma, box, u0, horizon, dt, plan, replica_id=0,
                      tol=1e-10, max_iter=200):
    """Fixed point of the discrete mild form on a small periodic box.

    u^{n+1}_t(x) = (semigroup_t u0)(x)
                 + sum_y sum_{s < t} p_{t-s}(y - x) sigma(u^n_s(y)) dB_s(y)

    with left-endpoint evaluation of the stochastic convolution and the
    same keyed noise increments an Euler run at step dt would consume.
    Returns (times, trajectory) with trajectory[j] the field at j*dt.
    """
    if box.boundary != "periodic":
        raise ValueError("picard oracle runs on periodic boxes")
    box.validate_for_kernel(kernel)
    u0 = np.asarray(u0, dtype=float)
    n = int(round(horizon / dt))
    ext = box.extents
    nsites = box.nsites

    # torus transition tables at every grid lag, as circulant multipliers;
    # torus_table already indexes by displacement mod extents
    fft_tables = [np.fft.rfftn(kernel.torus_table(j * dt, ext))
                  for j in range(n + 1)]

    def smooth(field, j):
        """(reflected-kernel convolution) E field(x + X_{j dt})."""
        spec = np.fft.rfftn(field)
        # correlation with p: multiply by conjugate transform
        return np.fft.irfftn(np.conj(fft_tables[j]) * spec, s=ext,
                             axes=tuple(range(len(ext))))

    rid = np.array([replica_id], dtype=np.uint64)
    d_b = np.empty((n,) + ext)
    for s in range(n):
        d_b[s] = plan.increments(s, int(round(dt / plan.dt_min)), rid,
                                 nsites)[0].reshape(ext)

    base = np.empty((n + 1,) + ext)
    for j in range(n + 1):
        base[j] = smooth(u0, j)

    traj = np.repeat(u0[None], n + 1, axis=0)
    last_change = math.inf
    for it in range(1, max_iter + 1):
        new = base.copy()
        # accumulate sum_{s<j} smooth_{j-s}(sigma(u_s) dB_s)
        contrib = [sigma(traj[s]) * d_b[s] for s in range(n)]
        for j in range(1, n + 1):
            acc = new[j]
            for s in range(j):
                acc += smooth(contrib[s], j - s)
            new[j] = acc
        change = float(np.max(np.abs(new - traj)))
        ratio = change / last_change if last_change not in (0.0, math.inf) else math.nan
        traj = new
        if change < tol:
            return dt * np.arange(n + 1), traj
        last_change = change
    raise NumericFailure("picard mild iteration did not converge",
                         final_change=last_change, contraction=ratio)
