"""Run manifests: fail-closed JSON validation with full error reporting.

A manifest resolves to concrete kernel / box / nonlinearity / profile
objects plus solver settings.  Validation collects *every* violation (with
dotted field paths) before raising, rejects unknown keys anywhere, and
materialises documented defaults (dt = 1e-3, scheme = euler, replicas = 1).
"""

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaError
from .sde import Box, Nonlinearity, ProfileSpec, _REGISTRY
from .walkkernel import JumpDistribution, WalkKernel, lazy_walk, simple_walk

SCHEMA_VERSION = 1

NAMED_KERNELS = {
    "simple-1d": lambda: WalkKernel(simple_walk(1)),
    "simple-2d": lambda: WalkKernel(simple_walk(2)),
    "simple-3d": lambda: WalkKernel(simple_walk(3)),
    "lazy-1d": lambda: WalkKernel(lazy_walk(1)),
}

DEFAULT_DT = 1e-3
DEFAULT_SCHEME = "euler"


@dataclass
class RunManifest:
    kernel: WalkKernel
    box: Box
    sigma: Nonlinearity
    u0: ProfileSpec
    dt: float
    horizon: float
    scheme: str
    dt_min: float
    snapshot_times: tuple
    marked_sites: tuple
    record_b_windows: bool
    observables: tuple
    seed: int
    replicas: int
    threads: int
    output_dir: str
    experiment: dict
    sha256: str
    raw: dict = field(repr=False, default_factory=dict)


def canonical_hash(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


class _Check:
    def __init__(self):
        self.errors = []

    def fail(self, path, msg):
        self.errors.append(f"{path}: {msg}")

    def expect_keys(self, path, obj, allowed, required=()):
        for key in obj:
            if key not in allowed:
                self.fail(f"{path}.{key}" if path else key, "unknown key")
        for key in required:
            if key not in obj:
                self.fail(f"{path}.{key}" if path else key, "missing required key")

    def number(self, path, obj, key, default=None, positive=False,
               nonnegative=False, integer=False):
        if key not in obj:
            return default
        v = obj[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(f"{path}.{key}" if path else key, "must be a number")
            return default
        if integer and int(v) != v:
            self.fail(f"{path}.{key}" if path else key, "must be an integer")
            return default
        if positive and not v > 0:
            self.fail(f"{path}.{key}" if path else key, "must be positive")
            return default
        if nonnegative and v < 0:
            self.fail(f"{path}.{key}" if path else key, "must be nonnegative")
            return default
        return int(v) if integer else float(v)


def _parse_kernel(obj, chk, base_dir):
    if not isinstance(obj, dict):
        chk.fail("kernel", "must be an object")
        return None
    if "name" in obj:
        chk.expect_keys("kernel", obj, {"name", "rate"})
        name = obj["name"]
        if name not in NAMED_KERNELS:
            chk.fail("kernel.name", f"unknown kernel {name!r}; "
                                    f"known: {sorted(NAMED_KERNELS)}")
            return None
        kernel = NAMED_KERNELS[name]()
        rate = chk.number("kernel", obj, "rate", default=kernel.rate, positive=True)
        return WalkKernel(kernel.jumps, rate=rate)
    if "file" in obj:
        chk.expect_keys("kernel", obj, {"file"})
        path = os.path.join(base_dir, obj["file"])
        try:
            with open(path, encoding="utf-8") as fh:
                obj = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            chk.fail("kernel.file", f"cannot load {path}: {exc}")
            return None
    chk.expect_keys("kernel", obj, {"dim", "jumps", "rate"}, required=("dim", "jumps"))
    dim = chk.number("kernel", obj, "dim", positive=True, integer=True)
    rate = chk.number("kernel", obj, "rate", default=1.0, positive=True)
    jumps = obj.get("jumps")
    if not isinstance(jumps, list) or not jumps:
        chk.fail("kernel.jumps", "must be a nonempty list")
        return None
    vecs, masses = [], []
    for i, j in enumerate(jumps):
        if not isinstance(j, dict) or set(j) != {"vec", "p"}:
            chk.fail(f"kernel.jumps[{i}]", "must be an object with keys vec, p")
            return None
        vecs.append(tuple(j["vec"]))
        masses.append(j["p"])
    if dim is None:
        return None
    try:
        return WalkKernel(JumpDistribution(dim, tuple(vecs), tuple(masses)),
                          rate=rate)
    except (ValueError, TypeError) as exc:
        chk.fail("kernel.jumps", str(exc))
        return None


def _parse_sigma(obj, chk):
    if not isinstance(obj, dict):
        chk.fail("sigma", "must be an object")
        return None
    kind = obj.get("kind")
    if kind == "linear":
        chk.expect_keys("sigma", obj, {"kind", "q"}, required=("q",))
        q = chk.number("sigma", obj, "q", nonnegative=True)
        return Nonlinearity.linear(q) if q is not None else None
    if kind == "custom":
        chk.expect_keys("sigma", obj, {"kind", "name", "lip", "ell"},
                        required=("name", "lip"))
        if "lip" not in obj:
            return None
        name = obj.get("name")
        if name not in _REGISTRY:
            chk.fail("sigma.name", f"unknown nonlinearity {name!r}; "
                                   f"known: {sorted(_REGISTRY)}")
            return None
        lip = chk.number("sigma", obj, "lip", positive=True)
        ell = chk.number("sigma", obj, "ell", default=0.0, nonnegative=True)
        if lip is None:
            return None
        fn, _, _ = _REGISTRY[name]
        return Nonlinearity.custom(fn, lip=lip, ell=ell, name=name)
    chk.fail("sigma.kind", "must be 'linear' or 'custom'")
    return None


def _parse_u0(obj, chk):
    if not isinstance(obj, dict):
        chk.fail("u0", "must be an object")
        return None
    kind = obj.get("kind")
    if kind in ("delta", "constant"):
        chk.expect_keys("u0", obj, {"kind", "value"})
        value = chk.number("u0", obj, "value", default=1.0)
        return ProfileSpec(kind, value=value)
    if kind == "table":
        chk.expect_keys("u0", obj, {"kind", "entries"}, required=("entries",))
        entries = obj.get("entries")
        if not isinstance(entries, list):
            chk.fail("u0.entries", "must be a list")
            return None
        table = []
        for i, e in enumerate(entries):
            if not isinstance(e, dict) or set(e) != {"site", "value"}:
                chk.fail(f"u0.entries[{i}]", "must have keys site, value")
                return None
            table.append((tuple(e["site"]), e["value"]))
        return ProfileSpec("table", table=tuple(table))
    chk.fail("u0.kind", "must be 'delta', 'constant' or 'table'")
    return None


def parse_and_validate(text, base_dir="."):
    """Parse a UTF-8 JSON manifest; raises SchemaError listing every
    violation.  SHE_SEED in the environment overrides the manifest seed."""
    chk = _Check()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError([f"$: invalid JSON ({exc})"]) from exc
    if not isinstance(raw, dict):
        raise SchemaError(["$: manifest must be a JSON object"])

    allowed = {"schema_version", "kernel", "box", "sigma", "u0", "solver",
               "seed", "replicas", "threads", "output_dir", "experiment"}
    chk.expect_keys("", raw, allowed,
                    required=("kernel", "box", "sigma", "u0", "seed"))
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        chk.fail("schema_version", f"unsupported version {version!r}")

    kernel = _parse_kernel(raw.get("kernel", {}), chk, base_dir)
    sigma = _parse_sigma(raw.get("sigma", {}), chk) if "sigma" in raw else None
    u0 = _parse_u0(raw.get("u0", {}), chk) if "u0" in raw else None

    box = None
    if "box" in raw:
        bobj = raw["box"]
        if not isinstance(bobj, dict):
            chk.fail("box", "must be an object")
        else:
            chk.expect_keys("box", bobj, {"extents", "boundary"},
                            required=("extents",))
            extents = bobj.get("extents")
            if not isinstance(extents, list) or not extents or \
                    any((isinstance(e, bool) or not isinstance(e, int) or e < 1)
                        for e in extents):
                chk.fail("box.extents", "must be a list of positive integers")
            else:
                boundary = bobj.get("boundary", "periodic")
                try:
                    box = Box(tuple(extents), boundary=boundary)
                except ValueError as exc:
                    chk.fail("box", str(exc))

    solver = raw.get("solver", {})
    dt = DEFAULT_DT
    horizon = 1.0
    scheme = DEFAULT_SCHEME
    dt_min = None
    snapshot_times = ()
    marked_sites = ()
    record_b = False
    observables = ("l1", "l2sq", "sup", "negfrac")
    if not isinstance(solver, dict):
        chk.fail("solver", "must be an object")
    else:
        chk.expect_keys("solver", solver,
                        {"dt", "T", "scheme", "dt_min", "snapshot_times",
                         "marked_sites", "record_b_windows", "observables"})
        dt = chk.number("solver", solver, "dt", default=DEFAULT_DT, positive=True)
        horizon = chk.number("solver", solver, "T", default=1.0, nonnegative=True)
        dt_min = chk.number("solver", solver, "dt_min", default=None, positive=True)
        scheme = solver.get("scheme", DEFAULT_SCHEME)
        if scheme not in ("euler", "split-exact-linear"):
            chk.fail("solver.scheme", f"unknown scheme {scheme!r}")
        st = solver.get("snapshot_times", [])
        if not isinstance(st, list) or any(isinstance(v, bool) or
                                           not isinstance(v, (int, float))
                                           for v in st):
            chk.fail("solver.snapshot_times", "must be a list of numbers")
        else:
            snapshot_times = tuple(float(v) for v in st)
        ms = solver.get("marked_sites", [])
        if not isinstance(ms, list):
            chk.fail("solver.marked_sites", "must be a list of sites")
        else:
            marked_sites = tuple(tuple(s) if isinstance(s, list) else (s,)
                                 for s in ms)
        record_b = solver.get("record_b_windows", False)
        if not isinstance(record_b, bool):
            chk.fail("solver.record_b_windows", "must be a boolean")
        if "observables" in solver:
            obs = solver["observables"]
            known = {"l1", "l2sq", "sup", "negfrac"}
            if not isinstance(obs, list) or not set(obs) <= known:
                chk.fail("solver.observables", f"must be a subset of {sorted(known)}")
            else:
                observables = tuple(obs)

    seed = chk.number("", raw, "seed", integer=True, nonnegative=True)
    env_seed = os.environ.get("SHE_SEED")
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError:
            chk.fail("seed", f"SHE_SEED override {env_seed!r} is not an integer")
    replicas = chk.number("", raw, "replicas", default=1, positive=True,
                          integer=True)
    threads = chk.number("", raw, "threads", default=os.cpu_count() or 1,
                         positive=True, integer=True)
    output_dir = raw.get("output_dir", "out")
    if not isinstance(output_dir, str):
        chk.fail("output_dir", "must be a string")
        output_dir = "out"
    experiment = raw.get("experiment", {})
    if not isinstance(experiment, dict):
        chk.fail("experiment", "must be an object")
        experiment = {}

    if box is not None and kernel is not None and box.dim != kernel.dim:
        chk.fail("box.extents", f"dimension {box.dim} does not match "
                                f"kernel dim {kernel.dim}")
    if scheme == "split-exact-linear" and sigma is not None and sigma.kind != "linear":
        chk.fail("solver.scheme", "split-exact-linear requires linear sigma")

    if chk.errors:
        raise SchemaError(chk.errors)
    return RunManifest(kernel=kernel, box=box, sigma=sigma, u0=u0, dt=dt,
                       horizon=horizon, scheme=scheme,
                       dt_min=dt_min if dt_min is not None else dt,
                       snapshot_times=snapshot_times,
                       marked_sites=marked_sites, record_b_windows=record_b,
                       observables=observables, seed=int(seed),
                       replicas=int(replicas), threads=int(threads),
                       output_dir=output_dir, experiment=experiment,
                       sha256=canonical_hash(raw), raw=raw)


def load_manifest(path):
    with open(path, encoding="utf-8") as fh:
        return parse_and_validate(fh.read(), base_dir=os.path.dirname(path) or ".")
