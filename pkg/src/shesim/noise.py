"""Counter-based Gaussian increment streams.

The driving field is a collection of independent Brownian motions, one per
lattice site.  Every normal increment consumed by a solver is addressed by
the tuple (seed, replica, site, fine-step) and computed by a keyed Philox
block cipher, so the value never depends on thread count, traversal order,
or which observables a run happens to record.  Runs at a coarse step size
aggregate increments generated at the plan's finest resolution ``dt_min``,
which keeps the Brownian path identical across step-size refinement
studies.

The Philox4x64-10 implementation below is bit-for-bit compatible with
``numpy.random.Philox`` (numpy consumes counter+1 for its first block; we
use the counter directly).  A numba-compiled kernel is used when available;
the pure-numpy fallback produces the same Philox words, though the cos/sin
in the Box-Muller step may differ from numba's libm by one ulp, so a given
installation sticks to whichever backend import found (automatic).
"""

from dataclasses import dataclass

import numpy as np

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_TWO_NEG53 = 2.0 ** -53


def _mulhilo(a, b):
    """128-bit product of uint64 arrays via 32-bit limbs; returns (lo, hi)."""
    a_lo = a & _MASK32
    a_hi = a >> _S32
    b_lo = b & _MASK32
    b_hi = b >> _S32
    ll = a_lo * b_lo
    lh = a_lo * b_hi
    hl = a_hi * b_lo
    hh = a_hi * b_hi
    cross = hl + (lh & _MASK32) + (ll >> _S32)
    lo = (ll & _MASK32) | (cross << _S32)
    hi = hh + (lh >> _S32) + (cross >> _S32)
    return lo, hi


def philox4x64(c0, c1, c2, c3, key0, key1):
    """One Philox4x64-10 block over broadcastable uint64 counter words."""
    c0, c1, c2, c3 = np.broadcast_arrays(
        np.asarray(c0, np.uint64), np.asarray(c1, np.uint64),
        np.asarray(c2, np.uint64), np.asarray(c3, np.uint64))
    c0 = c0.copy(); c1 = c1.copy(); c2 = c2.copy(); c3 = c3.copy()
    k0 = np.uint64(key0)
    k1 = np.uint64(key1)
    with np.errstate(over="ignore"):
        for _ in range(10):
            lo0, hi0 = _mulhilo(c0, _M0)
            lo1, hi1 = _mulhilo(c2, _M1)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
            k0 = k0 + _W0
            k1 = k1 + _W1
    return c0, c1, c2, c3


def _normals_numpy(step, replicas, nblocks, nsites, key0, key1, out):
    c1 = np.arange(nblocks, dtype=np.uint64)[None, :]
    c2 = np.asarray(replicas, dtype=np.uint64)[:, None]
    w0, w1, w2, w3 = philox4x64(np.uint64(step), c1, c2, np.uint64(0), key0, key1)
    # Box-Muller: one block feeds two (u, theta) pairs -> four normals.
    u0 = ((w0 >> _S11).astype(np.float64) + 1.0) * _TWO_NEG53
    t0 = (w1 >> _S11).astype(np.float64) * _TWO_NEG53
    u1 = ((w2 >> _S11).astype(np.float64) + 1.0) * _TWO_NEG53
    t1 = (w3 >> _S11).astype(np.float64) * _TWO_NEG53
    r0 = np.sqrt(-2.0 * np.log(u0))
    r1 = np.sqrt(-2.0 * np.log(u1))
    z = np.empty((c2.shape[0], 4 * nblocks))
    z[:, 0::4] = r0 * np.cos((2.0 * np.pi) * t0)
    z[:, 1::4] = r0 * np.sin((2.0 * np.pi) * t0)
    z[:, 2::4] = r1 * np.cos((2.0 * np.pi) * t1)
    z[:, 3::4] = r1 * np.sin((2.0 * np.pi) * t1)
    out[:, :] = z[:, :nsites]


try:
    import math

    from numba import njit

    @njit(cache=True)
    def _normals_numba(step, replicas, nblocks, nsites, key0, key1, out):  # pragma: no cover - numba
        M0 = np.uint64(0xD2E7470EE14C6C93)
        M1 = np.uint64(0xCA5A826395121157)
        W0 = np.uint64(0x9E3779B97F4A7C15)
        W1 = np.uint64(0xBB67AE8584CAA73B)
        MASK = np.uint64(0xFFFFFFFF)
        S32 = np.uint64(32)
        S11 = np.uint64(11)
        TWO_NEG53 = 2.0 ** -53
        TWOPI = 2.0 * np.pi
        for ri in range(replicas.shape[0]):
            rep = replicas[ri]
            for b in range(nblocks):
                c0 = np.uint64(step)
                c1 = np.uint64(b)
                c2 = np.uint64(rep)
                c3 = np.uint64(0)
                k0 = np.uint64(key0)
                k1 = np.uint64(key1)
                for _ in range(10):
                    a_lo = c0 & MASK; a_hi = c0 >> S32
                    b_lo = M0 & MASK; b_hi = M0 >> S32
                    ll = a_lo * b_lo; hl = a_hi * b_lo
                    lh = a_lo * b_hi; hh = a_hi * b_hi
                    cross = hl + (lh & MASK) + (ll >> S32)
                    lo0 = (ll & MASK) | (cross << S32)
                    hi0 = hh + (lh >> S32) + (cross >> S32)
                    a_lo = c2 & MASK; a_hi = c2 >> S32
                    b_lo = M1 & MASK; b_hi = M1 >> S32
                    ll = a_lo * b_lo; hl = a_hi * b_lo
                    lh = a_lo * b_hi; hh = a_hi * b_hi
                    cross = hl + (lh & MASK) + (ll >> S32)
                    lo1 = (ll & MASK) | (cross << S32)
                    hi1 = hh + (lh >> S32) + (cross >> S32)
                    c0 = hi1 ^ c1 ^ k0
                    c1 = lo1
                    c2 = hi0 ^ c3 ^ k1
                    c3 = lo0
                    k0 += W0
                    k1 += W1
                u0 = (np.float64(c0 >> S11) + 1.0) * TWO_NEG53
                t0 = np.float64(c1 >> S11) * TWO_NEG53
                u1 = (np.float64(c2 >> S11) + 1.0) * TWO_NEG53
                t1 = np.float64(c3 >> S11) * TWO_NEG53
                r0 = math.sqrt(-2.0 * math.log(u0))
                r1 = math.sqrt(-2.0 * math.log(u1))
                s = 4 * b
                if s < nsites:
                    out[ri, s] = r0 * math.cos(TWOPI * t0)
                if s + 1 < nsites:
                    out[ri, s + 1] = r0 * math.sin(TWOPI * t0)
                if s + 2 < nsites:
                    out[ri, s + 2] = r1 * math.cos(TWOPI * t1)
                if s + 3 < nsites:
                    out[ri, s + 3] = r1 * math.sin(TWOPI * t1)

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


# Domain separators keep field noise, walk sampling, and bootstrap draws on
# disjoint Philox key spaces even when they share a master seed.
DOMAIN_FIELD = 0x464C44
DOMAIN_WALK = 0x574C4B
DOMAIN_BOOT = 0x425354


@dataclass(frozen=True)
class NoisePlan:
    """Deterministic Gaussian increment stream for a lattice simulation.

    ``normals(step, replicas, nsites)`` returns the standard normals for
    fine step ``step``; the entry for (replica r, site index s) is a pure
    function of (seed, r, s, step).  Sites are addressed by their canonical
    box linear index.
    """

    seed: int
    dt_min: float
    salt: int = DOMAIN_FIELD

    def __post_init__(self):
        if not self.dt_min > 0.0:
            raise ValueError("dt_min must be positive")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must fit in uint64")

    def normals(self, fine_step, replicas, nsites, backend=None):
        """Standard normals, shape (len(replicas), nsites)."""
        replicas = np.ascontiguousarray(replicas, dtype=np.uint64)
        nblocks = (nsites + 3) // 4
        out = np.empty((replicas.shape[0], nsites))
        use_numba = _HAVE_NUMBA if backend is None else (backend == "numba")
        if use_numba:
            _normals_numba(np.uint64(fine_step), replicas, nblocks, nsites,
                           np.uint64(self.seed), np.uint64(self.salt), out)
        else:
            _normals_numpy(np.uint64(fine_step), replicas, nblocks, nsites,
                           np.uint64(self.seed), np.uint64(self.salt), out)
        return out

    def increments(self, coarse_step, substeps, replicas, nsites):
        """Brownian increments over coarse step = ``substeps`` fine steps.

        Returns N(0, substeps*dt_min) per (replica, site), as the aggregated
        fine-level increments, so coarse and fine runs share one Brownian
        path.
        """
        base = int(coarse_step) * int(substeps)
        acc = self.normals(base, replicas, nsites)
        for j in range(1, int(substeps)):
            acc += self.normals(base + j, replicas, nsites)
        acc *= np.sqrt(self.dt_min)
        return acc


def walk_rng(seed, stream):
    """Independent numpy Generator for path sampling, keyed by stream id."""
    bitgen = np.random.Philox(key=np.array([seed, DOMAIN_WALK + stream],
                                           dtype=np.uint64))
    return np.random.Generator(bitgen)


def bootstrap_rng(seed, stream=0):
    bitgen = np.random.Philox(key=np.array([seed, DOMAIN_BOOT + stream],
                                           dtype=np.uint64))
    return np.random.Generator(bitgen)
