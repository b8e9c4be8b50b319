"""Continuous-time random walk on Z^d: jump law, transition kernel, and
the coincidence quantities driving the second-moment analysis.

The walk jumps at exponential rate ``rate`` (default 1) with i.i.d. steps
drawn from a finite-support jump law.  Everything here is either exact
lattice arithmetic (step distributions by repeated convolution, transition
probabilities by a certified truncated Poisson series) or quadrature of the
Fourier representations

    coincidence_prob(tau)   = sum_x p_tau(x)^2
                            = (2 pi)^-d  int  exp(-2 r tau (1 - Re phi))  dxi
    coincidence_green(beta) = (2 pi)^-d  int  dxi / (beta + 2 r (1 - Re phi))

with phi the jump characteristic function and r the jump rate.  The Green
value at beta=0 is finite exactly when the symmetrized walk is transient.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericFailure

_MASS_TOL = 1e-12


@dataclass(frozen=True)
class JumpDistribution:
    """Finite-support law of a single jump.

    ``support`` maps lattice vectors to masses.  The zero vector is allowed
    (lazy walk).  ``symmetrized_full_rank`` records whether the differences
    of support vectors span all d directions; together with d >= 3 it is
    the transience criterion used for the beta = 0 Green value.
    """

    dim: int
    vectors: tuple
    masses: tuple
    symmetrized_full_rank: bool = field(init=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be a positive integer")
        vecs = tuple(tuple(int(c) for c in v) for v in self.vectors)
        masses = tuple(float(m) for m in self.masses)
        if len(vecs) != len(masses) or not vecs:
            raise ValueError("support vectors and masses must pair up")
        for v in vecs:
            if len(v) != self.dim:
                raise ValueError(f"jump vector {v} is not {self.dim}-dimensional")
        for m in masses:
            if not (0.0 < m <= 1.0):
                raise ValueError("each mass must lie in (0, 1]")
        if len(set(vecs)) != len(vecs):
            raise ValueError("support vectors must be distinct")
        if abs(sum(masses) - 1.0) > _MASS_TOL:
            raise ValueError(f"masses sum to {sum(masses)!r}, not 1 within {_MASS_TOL}")
        object.__setattr__(self, "vectors", vecs)
        object.__setattr__(self, "masses", masses)
        diffs = [np.subtract(a, b) for a in vecs for b in vecs if a != b]
        rank = 0
        if diffs:
            rank = np.linalg.matrix_rank(np.array(diffs, dtype=float))
        object.__setattr__(self, "symmetrized_full_rank", rank == self.dim)

    @property
    def max_jump_norm(self):
        return max(max(abs(c) for c in v) for v in self.vectors)

    def mean(self):
        return tuple(float(sum(m * v[k] for v, m in zip(self.vectors, self.masses)))
                     for k in range(self.dim))


def simple_walk(dim):
    """Nearest-neighbour walk: +-e_k each with mass 1/(2d)."""
    vecs, masses = [], []
    for k in range(dim):
        for s in (1, -1):
            v = [0] * dim
            v[k] = s
            vecs.append(tuple(v))
            masses.append(1.0 / (2 * dim))
    return JumpDistribution(dim, tuple(vecs), tuple(masses))


def lazy_walk(dim=1):
    """Jump law concentrated at 0; the generator vanishes identically."""
    return JumpDistribution(dim, ((0,) * dim,), (1.0,))


def truncated_power_law(exponent, radius, dim=1):
    """Symmetric heavy-tail surrogate: mass ~ |z|^(-1-exponent) on
    1 <= |z| <= radius per axis direction, renormalised.

    Infinite-support stable-like laws are out of scope; the truncation
    radius is the supported knob, and whether the surrogate reproduces the
    stable meeting exponent over desk-scale horizons is an empirical
    question the toolkit can probe but does not assert.
    """
    if exponent <= 0 or radius < 1:
        raise ValueError("need exponent > 0 and radius >= 1")
    vecs, masses = [], []
    for k in range(dim):
        for r in range(1, int(radius) + 1):
            for s in (1, -1):
                v = [0] * dim
                v[k] = s * r
                vecs.append(tuple(v))
                masses.append(r ** (-1.0 - exponent))
    total = sum(masses)
    return JumpDistribution(dim, tuple(vecs),
                            tuple(m / total for m in masses))


class WalkKernel:
    """A continuous-time random walk with finite-support jumps.

    Caches step distributions, quadrature grids, and located zeros of the
    Fourier symbol; all public methods are pure functions of (kernel,
    arguments).
    """

    def __init__(self, jumps, rate=1.0, transient_override=None):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.jumps = jumps
        self.rate = float(rate)
        self._transient_override = transient_override
        self._stepdists = None
        self._grid_cache = {}
        self._zeros = None

    @property
    def dim(self):
        return self.jumps.dim

    @property
    def symmetrized_transient(self):
        """Whether the difference of two independent copies is transient."""
        if self._transient_override is not None:
            return bool(self._transient_override)
        return self.dim >= 3 and self.jumps.symmetrized_full_rank

    # ------------------------------------------------------------------
    # characteristic function and Fourier symbol
    # ------------------------------------------------------------------
    def char_function(self, xi):
        """E exp(i xi . Z) for a single jump Z; |result| <= 1, result(0) = 1."""
        xi = np.asarray(xi, dtype=float)
        if xi.shape != (self.dim,):
            raise ValueError(f"xi must have dimension {self.dim}, got shape {xi.shape}")
        out = 0.0 + 0.0j
        for v, m in zip(self.jumps.vectors, self.jumps.masses):
            out += m * np.exp(1j * float(np.dot(xi, v)))
        return complex(out)

    def _symbol_on_grid(self, axes):
        """1 - Re phi evaluated on a tensor grid given per-axis node arrays."""
        d = self.dim
        re_phi = np.zeros(tuple(len(a) for a in axes))
        for v, m in zip(self.jumps.vectors, self.jumps.masses):
            phase = np.zeros_like(re_phi)
            for k in range(d):
                shape = [1] * d
                shape[k] = len(axes[k])
                phase = phase + (axes[k] * v[k]).reshape(shape)
            re_phi += m * np.cos(phase)
        return 1.0 - re_phi

    # ------------------------------------------------------------------
    # exact step distributions and the Poisson-series transition kernel
    # ------------------------------------------------------------------
    def _ensure_stepdists(self, n):
        """n-fold jump convolutions, exact on a growing box (no aliasing)."""
        if self._stepdists is None:
            delta = np.ones((1,) * self.dim)
            self._stepdists = [(delta, np.zeros(self.dim, dtype=np.int64))]
        lo_j = np.array([min(v[k] for v in self.jumps.vectors)
                         for k in range(self.dim)], dtype=np.int64)
        hi_j = np.array([max(v[k] for v in self.jumps.vectors)
                         for k in range(self.dim)], dtype=np.int64)
        while len(self._stepdists) <= n:
            prev, lo_prev = self._stepdists[-1]
            lo_new = lo_prev + lo_j
            shape = tuple(np.array(prev.shape) + (hi_j - lo_j))
            nxt = np.zeros(shape)
            for v, m in zip(self.jumps.vectors, self.jumps.masses):
                start = np.array(v, dtype=np.int64) - lo_j
                sl = tuple(slice(int(s), int(s) + prev.shape[k])
                           for k, s in enumerate(start))
                nxt[sl] += m * prev
            self._stepdists.append((nxt, lo_new))

    def _poisson_weights(self, t, tol):
        """Weights e^-lt (lt)^n / n! up to the certified truncation point."""
        lam = self.rate * t
        w = math.exp(-lam)
        weights = [w]
        cum = w
        n = 0
        # cut at the smallest N whose Poisson tail is below tol
        while 1.0 - cum > tol:
            n += 1
            w *= lam / n
            weights.append(w)
            cum += w
            if n > 100000:
                raise NumericFailure("Poisson series did not truncate",
                                     t=t, tol=tol)
        return np.array(weights), max(1.0 - cum, 0.0)

    def transition_profile(self, t, tol=1e-12):
        """Full table of p_t(x) with a reported truncation bound."""
        if t < 0:
            raise ValueError("t must be nonnegative")
        weights, tail = self._poisson_weights(t, tol)
        n_max = len(weights) - 1
        self._ensure_stepdists(n_max)
        table_full, lo_full = self._stepdists[n_max]
        acc = np.zeros_like(table_full)
        for n, w in enumerate(weights):
            tab, lo = self._stepdists[n]
            start = lo - lo_full
            sl = tuple(slice(int(s), int(s) + tab.shape[k])
                       for k, s in enumerate(start))
            acc[sl] += w * tab
        return TransitionTable(values=acc, lo=tuple(int(c) for c in lo_full),
                               t=float(t), tail_bound=float(tail))

    def transition_prob(self, t, x, tol=1e-12):
        """p_t(x) = P{X_t = x} by the truncated Poisson series."""
        x = tuple(int(c) for c in np.atleast_1d(x))
        if len(x) != self.dim:
            raise ValueError(f"x must have dimension {self.dim}")
        return self.transition_profile(t, tol).prob(x)

    def torus_table(self, t, extents, tol=1e-12):
        """Transition table folded onto a periodic box (exact projection)."""
        extents = tuple(int(e) for e in extents)
        prof = self.transition_profile(t, tol)
        out = np.zeros(extents)
        it = np.ndindex(prof.values.shape)
        # fold every lattice point into its torus class
        for idx in it:
            p = prof.values[idx]
            if p == 0.0:
                continue
            coords = tuple((prof.lo[k] + idx[k]) % extents[k]
                           for k in range(self.dim))
            out[coords] += p
        return out

    # ------------------------------------------------------------------
    # coincidence probability P{X_t = X'_t} two ways
    # ------------------------------------------------------------------
    def coincidence_prob(self, tau, tol=1e-10):
        vals, err = self.coincidence_curve([tau], tol=tol)
        return float(vals[0])

    def coincidence_curve(self, taus, tol=1e-10, max_nodes=512):
        """P{X_tau = X'_tau} on a shared quadrature grid (exactly monotone).

        Tensor Gauss-Legendre with dyadic refinement; raises NumericFailure
        with the achieved error when the grid limit is hit.
        """
        taus = np.asarray(taus, dtype=float)
        if np.any(taus < 0):
            raise ValueError("tau must be nonnegative")
        prev = None
        n = 16
        while n <= max_nodes:
            vals = self._coincidence_on_grid(taus, n)
            if prev is not None:
                err = float(np.max(np.abs(vals - prev)))
                if err <= tol:
                    return vals, err
            prev = vals
            n *= 2
        raise NumericFailure("coincidence quadrature did not converge",
                             achieved_error=float(np.max(np.abs(vals - prev))),
                             tol=tol)

    def _gl_axes(self, n):
        if n not in self._grid_cache:
            x, w = np.polynomial.legendre.leggauss(n)
            self._grid_cache[n] = (x * np.pi, w * np.pi)
        return self._grid_cache[n]

    def _coincidence_on_grid(self, taus, n):
        x, w = self._gl_axes(n)
        g = self._symbol_on_grid([x] * self.dim)
        wgt = np.ones_like(g)
        for k in range(self.dim):
            shape = [1] * self.dim
            shape[k] = n
            wgt = wgt * w.reshape(shape)
        out = np.empty(len(taus))
        for i, tau in enumerate(taus):
            out[i] = np.sum(wgt * np.exp(-2.0 * self.rate * tau * g))
        return out / (2.0 * np.pi) ** self.dim

    def coincidence_prob_lattice(self, tau, tol=1e-12):
        """Independent route: sum_x p_tau(x)^2 from the exact series."""
        prof = self.transition_profile(tau, tol)
        return float(np.sum(prof.values ** 2))

    # ------------------------------------------------------------------
    # Green value (Laplace transform of the coincidence probability)
    # ------------------------------------------------------------------
    def _symbol_zeros(self):
        """Zeros of 1 - Re phi in (-pi, pi]^d, polished by Newton."""
        if self._zeros is not None:
            return self._zeros
        d = self.dim
        n_scan = {1: 4096, 2: 256, 3: 72}.get(d, 48)
        ax = np.linspace(-np.pi, np.pi, n_scan, endpoint=False)
        g = self._symbol_on_grid([ax] * d)
        cand = np.argwhere(g < 1e-3)
        pts = [ax[c] for c in cand]   # all axes share the scan nodes
        zeros = []
        for p in pts:
            z = self._newton_zero(np.array(p, dtype=float))
            if z is None:
                continue
            if not all(np.max(np.abs(z - q)) > 1e-6 for q in zeros):
                continue
            zeros.append(z)
        if not zeros:
            zeros = [np.zeros(d)]
        self._zeros = zeros
        return zeros

    def _newton_zero(self, xi):
        vecs = np.array(self.jumps.vectors, dtype=float)
        masses = np.array(self.jumps.masses)
        for _ in range(60):
            ph = vecs @ xi
            grad = (masses * np.sin(ph)) @ vecs
            hess = (vecs * (masses * np.cos(ph))[:, None]).T @ vecs
            try:
                step = np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                return None
            xi = xi - step
            if np.max(np.abs(step)) < 1e-14:
                break
        g = 1.0 - float(np.sum(masses * np.cos(vecs @ xi)))
        if abs(g) > 1e-12:
            return None
        # map into (-pi, pi]
        xi = (xi + np.pi) % (2 * np.pi) - np.pi
        return xi

    def coincidence_green(self, beta, tol=1e-7, with_error=False):
        """Laplace transform of the coincidence probability.

        Returns +inf at beta = 0 for a recurrent symmetrized walk (that is
        the sentinel, not an exception).  The integrable singularities of
        the Fourier integrand are resolved by dyadic box refinement around
        every zero of the symbol, iterated until successive cumulative
        estimates agree.
        """
        beta = float(beta)
        if beta < 0:
            raise ValueError("beta must be nonnegative")
        if beta == 0.0 and not self.symmetrized_transient:
            return (math.inf, 0.0) if with_error else math.inf
        zeros = self._symbol_zeros()
        d = self.dim
        nodes = 12
        x_ref, w_ref = np.polynomial.legendre.leggauss(nodes)

        def gl_box(lo, hi):
            axes, wts = [], []
            for k in range(d):
                half = 0.5 * (hi[k] - lo[k])
                mid = 0.5 * (hi[k] + lo[k])
                axes.append(mid + half * x_ref)
                wts.append(half * w_ref)
            g = self._symbol_on_grid(axes)
            wgt = np.ones_like(g)
            for k in range(d):
                shape = [1] * d
                shape[k] = nodes
                wgt = wgt * wts[k].reshape(shape)
            return float(np.sum(wgt / (beta + 2.0 * self.rate * g)))

        def near_zero(lo, hi):
            for z in zeros:
                # admit the zero's own box and immediate neighbours
                margin = 0.51 * (hi - lo)
                if np.all(z >= lo - margin) and np.all(z <= hi + margin):
                    return True
            return False

        total = 0.0
        boxes = [(np.full(d, -np.pi), np.full(d, np.pi))]
        increments = []
        for level in range(200):
            refine, level_sum = [], 0.0
            for lo, hi in boxes:
                if near_zero(lo, hi):
                    refine.append((lo, hi))
                else:
                    level_sum += gl_box(lo, hi)
            total += level_sum
            increments.append(level_sum)
            if not refine:
                break
            if level >= 3 and increments[-1] < tol and increments[-2] < tol:
                break
            nxt = []
            for lo, hi in refine:
                mid = 0.5 * (lo + hi)
                for corner in np.ndindex(*(2,) * d):
                    clo = np.where(np.array(corner) == 0, lo, mid)
                    chi = np.where(np.array(corner) == 0, mid, hi)
                    nxt.append((clo, chi))
            boxes = nxt
        else:
            raise NumericFailure("green quadrature did not converge",
                                 achieved_error=increments[-1], tol=tol)
        # geometric tail estimate from the last two shell contributions
        tail = 0.0
        if len(increments) >= 2 and increments[-2] > 0:
            r = increments[-1] / increments[-2]
            if 0 < r < 0.95:
                tail = increments[-1] * r / (1 - r)
        value = total / (2.0 * np.pi) ** d
        err = (tail + tol) / (2.0 * np.pi) ** d
        return (value, err) if with_error else value

    # ------------------------------------------------------------------
    # path sampling
    # ------------------------------------------------------------------
    def sample_path(self, horizon, rng):
        """Piecewise-constant path on [0, horizon] started at the origin.

        Jump times are a rate-``rate`` Poisson stream; steps are i.i.d.
        from the jump law.  Deterministic given the generator state.
        """
        if horizon < 0:
            raise ValueError("horizon must be nonnegative")
        n = int(rng.poisson(self.rate * horizon)) if horizon > 0 else 0
        times = np.sort(rng.uniform(0.0, horizon, size=n))
        if n:
            idx = rng.choice(len(self.jumps.vectors), size=n,
                             p=np.array(self.jumps.masses))
            steps = np.array(self.jumps.vectors, dtype=np.int64)[idx]
            positions = np.vstack([np.zeros((1, self.dim), dtype=np.int64),
                                   np.cumsum(steps, axis=0)])
        else:
            positions = np.zeros((1, self.dim), dtype=np.int64)
        return WalkPath(times=times, positions=positions, horizon=float(horizon))


@dataclass(frozen=True)
class TransitionTable:
    """Dense p_t over the reachable box, with the series truncation bound."""

    values: np.ndarray
    lo: tuple
    t: float
    tail_bound: float

    def prob(self, x):
        idx = tuple(int(c) - self.lo[k] for k, c in enumerate(x))
        for k, i in enumerate(idx):
            if not (0 <= i < self.values.shape[k]):
                return 0.0
        return float(self.values[idx])

    def support_points(self):
        for idx in np.ndindex(self.values.shape):
            yield tuple(self.lo[k] + idx[k] for k in range(len(self.lo)))


@dataclass(frozen=True)
class WalkPath:
    """Jump times and the visited positions (positions[0] is the origin)."""

    times: np.ndarray
    positions: np.ndarray
    horizon: float

    def position_at(self, t):
        k = int(np.searchsorted(self.times, t, side="right"))
        return tuple(int(c) for c in self.positions[k])

    @property
    def n_jumps(self):
        return len(self.times)


def smoothed_profile_l2(kernel, sites, values, taus, tol=1e-10, max_nodes=512):
    """||heat-semigroup(tau) applied to a finite profile||_{l^2}^2.

    Plancherel route: (2 pi)^-d int |u0_hat|^2 exp(-2 r tau (1 - Re phi));
    shares the refinement logic of the coincidence curve.
    """
    taus = np.asarray(taus, dtype=float)
    d = kernel.dim
    sites = [tuple(int(c) for c in s) for s in sites]
    vals = np.asarray(values, dtype=float)
    prev = None
    n = 16
    while n <= max_nodes:
        x, w = kernel._gl_axes(n)
        g = kernel._symbol_on_grid([x] * d)
        wgt = np.ones_like(g)
        for k in range(d):
            shape = [1] * d
            shape[k] = n
            wgt = wgt * w.reshape(shape)
        uhat = np.zeros(g.shape, dtype=complex)
        for s, v in zip(sites, vals):
            phase = np.zeros(g.shape)
            for k in range(d):
                shape = [1] * d
                shape[k] = n
                phase = phase + (x * s[k]).reshape(shape)
            uhat += v * np.exp(1j * phase)
        density = wgt * np.abs(uhat) ** 2
        out = np.array([np.sum(density * np.exp(-2.0 * kernel.rate * tau * g))
                        for tau in taus]) / (2.0 * np.pi) ** d
        if prev is not None and float(np.max(np.abs(out - prev))) <= tol:
            return out
        prev = out
        n *= 2
    raise NumericFailure("profile quadrature did not converge", tol=tol)
