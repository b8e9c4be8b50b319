"""Manifest validation and the command-line surface."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from shesim.errors import SchemaError
from shesim.manifest import canonical_hash, parse_and_validate

MINIMAL = {
    "kernel": {"name": "simple-1d"},
    "box": {"extents": [33]},
    "sigma": {"kind": "linear", "q": 0.5},
    "u0": {"kind": "delta"},
    "seed": 11,
}


def manifest(**overrides):
    doc = json.loads(json.dumps(MINIMAL))
    doc.update(overrides)
    return doc


# ----------------------------------------------------------------------
# validation
# ----------------------------------------------------------------------
def test_minimal_manifest_defaults():
    man = parse_and_validate(json.dumps(MINIMAL))
    assert man.dt == 1e-3 and man.scheme == "euler" and man.replicas == 1
    assert man.kernel.dim == 1 and man.box.extents == (33,)
    assert man.sha256 == canonical_hash(MINIMAL)


def test_all_errors_reported_with_paths():
    doc = manifest(solver={"dt": -0.5, "bogus": 1},
                   sigma={"kind": "custom", "name": "saturating"},
                   extra_key=3)
    with pytest.raises(SchemaError) as err:
        parse_and_validate(json.dumps(doc))
    msgs = err.value.errors
    assert any(m.startswith("solver.dt:") for m in msgs)
    assert any(m.startswith("solver.bogus:") for m in msgs)
    assert any(m.startswith("sigma.lip:") for m in msgs)
    assert any(m.startswith("extra_key:") for m in msgs)
    assert len(msgs) >= 4


def test_rejections():
    with pytest.raises(SchemaError):
        parse_and_validate("not json at all {")
    with pytest.raises(SchemaError, match="seed"):
        parse_and_validate(json.dumps({k: v for k, v in MINIMAL.items()
                                       if k != "seed"}))
    bad_dim = manifest(kernel={"name": "simple-2d"})
    with pytest.raises(SchemaError, match="dimension"):
        parse_and_validate(json.dumps(bad_dim))
    bad_scheme = manifest(solver={"scheme": "split-exact-linear"},
                          sigma={"kind": "custom", "name": "saturating",
                                 "lip": 1.0})
    with pytest.raises(SchemaError, match="linear"):
        parse_and_validate(json.dumps(bad_scheme))


def test_inline_kernel_and_table_profile():
    doc = manifest(kernel={"dim": 1, "jumps": [{"vec": [2], "p": 0.5},
                                               {"vec": [-2], "p": 0.5}]},
                   u0={"kind": "table", "entries": [{"site": [0], "value": 2.0}]})
    man = parse_and_validate(json.dumps(doc))
    assert man.kernel.jumps.max_jump_norm == 2
    assert man.u0.l1_norm(1) == 2.0


def test_kernel_file_reference(tmp_path):
    kfile = tmp_path / "k.json"
    kfile.write_text(json.dumps({"dim": 1, "jumps": [{"vec": [1], "p": 0.4},
                                                     {"vec": [-1], "p": 0.6}]}))
    doc = manifest(kernel={"file": "k.json"})
    path = tmp_path / "m.json"
    path.write_text(json.dumps(doc))
    from shesim.manifest import load_manifest
    man = load_manifest(str(path))
    assert man.kernel.jumps.masses == (0.4, 0.6)


def test_she_seed_override(monkeypatch):
    monkeypatch.setenv("SHE_SEED", "999")
    man = parse_and_validate(json.dumps(MINIMAL))
    assert man.seed == 999
    monkeypatch.setenv("SHE_SEED", "abc")
    with pytest.raises(SchemaError, match="SHE_SEED"):
        parse_and_validate(json.dumps(MINIMAL))


# ----------------------------------------------------------------------
# CLI
# ----------------------------------------------------------------------
def run_cli(*args):
    return subprocess.run([sys.executable, "-m", "shesim.cli", *args],
                          capture_output=True, text=True)


@pytest.fixture()
def man_path(tmp_path):
    doc = manifest(solver={"dt": 0.002, "T": 0.25,
                           "scheme": "split-exact-linear",
                           "snapshot_times": [0.1, 0.25],
                           "marked_sites": [[0]]},
                   replicas=6, threads=1)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(doc))
    return str(path)


def test_cli_simulate_is_reproducible(man_path, tmp_path):
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert run_cli("simulate", "--manifest", man_path, "--out", out1).returncode == 0
    assert run_cli("simulate", "--manifest", man_path, "--out", out2).returncode == 0
    a = open(os.path.join(out1, "trajectory.csv"), "rb").read()
    b = open(os.path.join(out2, "trajectory.csv"), "rb").read()
    assert a == b
    text = a.decode()
    assert text.startswith("# shesim-version:")
    assert "manifest-sha256" in text


def test_cli_schema_error_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(manifest(solver={"dt": -1})))
    proc = run_cli("simulate", "--manifest", str(bad))
    assert proc.returncode == 2
    assert "solver.dt" in proc.stderr


def test_cli_kernel_curves(man_path, tmp_path):
    out = str(tmp_path / "k")
    proc = run_cli("kernel", "--manifest", man_path, "--out", out,
                   "--overlap", "--tmax", "4", "--points", "9",
                   "--green", "--betas", "1,2")
    assert proc.returncode == 0
    rows = [line.split(",") for line in
            open(os.path.join(out, "kernel_overlap.csv"))
            if not line.startswith("#")][1:]
    vals = [float(r[1]) for r in rows]
    assert all(a > b for a, b in zip(vals, vals[1:]))   # monotone column
    greens = [line for line in open(os.path.join(out, "kernel_green.csv"))
              if not line.startswith("#")]
    assert len(greens) == 3


def test_cli_classify_and_renewal(man_path, tmp_path):
    out = str(tmp_path / "c")
    proc = run_cli("classify", "--manifest", man_path, "--out", out)
    assert proc.returncode == 0
    payload = json.load(open(os.path.join(out, "classify.json")))
    assert "recurrent" in payload["label"]
    g = tmp_path / "g.csv"
    h = tmp_path / "h.csv"
    ts = 0.01 * np.arange(101)
    np.savetxt(g, np.exp(-ts), delimiter=",")
    np.savetxt(h, 0.5 * np.exp(-ts), delimiter=",")
    proc = run_cli("renewal", "--g-csv", str(g), "--h-csv", str(h),
                   "--dt", "0.01", "--out", str(tmp_path / "r"))
    assert proc.returncode == 0
    lines = [l for l in open(tmp_path / "r" / "renewal.csv")
             if not l.startswith("#")]
    assert lines[0].strip() == "t,f,tilt_bound"
    f_end = float(lines[-1].split(",")[1])
    assert f_end == pytest.approx(np.exp(-0.5), abs=1e-3)


def test_cli_moments_and_local_tests(tmp_path):
    doc = manifest(solver={"dt": 0.002, "T": 0.5,
                           "scheme": "split-exact-linear"},
                   replicas=200, threads=1,
                   experiment={"k": [1, 2], "t": [0.5],
                               "methods": ["feynman-kac", "renewal"],
                               "fk_samples": 5000})
    path = tmp_path / "m.json"
    path.write_text(json.dumps(doc))
    out = str(tmp_path / "mo")
    assert run_cli("moments", "--manifest", str(path), "--out", out).returncode == 0
    lines = [l for l in open(os.path.join(out, "moments.csv"))
             if not l.startswith("#")]
    assert lines[0].strip() == "method,k,t,estimate,se,replicas"
    assert len(lines) == 4   # fk k=1,2 plus renewal row per t

    doc2 = manifest(solver={"dt": 0.000625, "T": 0.1,
                            "scheme": "split-exact-linear"},
                    u0={"kind": "constant", "value": 1.0},
                    replicas=100, threads=1,
                    experiment={"t": 0.05, "taus": [0.025, 0.0125],
                                "sites": [[0], [4]]})
    path2 = tmp_path / "c.json"
    path2.write_text(json.dumps(doc2))
    assert run_cli("clt-test", "--manifest", str(path2),
                   "--out", str(tmp_path / "clt")).returncode == 0
    assert run_cli("rn-test", "--manifest", str(path2),
                   "--out", str(tmp_path / "rn")).returncode == 0
    assert os.path.exists(tmp_path / "clt" / "clt_test.csv")
    assert os.path.exists(tmp_path / "rn" / "rn_test.csv")


def test_cli_numeric_failure_exit_code(tmp_path):
    # the particle estimator needs a linear coefficient; asking for it with
    # a custom one is a numeric failure (exit 1), not a schema error
    doc = manifest(sigma={"kind": "custom", "name": "saturating", "lip": 1.0},
                   experiment={"methods": ["feynman-kac"], "k": [2],
                               "t": [0.5], "fk_samples": 10})
    path = tmp_path / "nf.json"
    path.write_text(json.dumps(doc))
    proc = run_cli("moments", "--manifest", str(path),
                   "--out", str(tmp_path / "o"))
    assert proc.returncode == 1
    assert "numeric failure" in proc.stderr


def test_cli_verify_determinism_compare(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert run_cli("verify", "--suite", "determinism", "--out", a,
                   "--threads", "1").returncode == 0
    proc = run_cli("verify", "--suite", "determinism", "--out", b,
                   "--threads", "2", "--compare-with", a)
    assert proc.returncode == 0
    assert "byte-identical" in proc.stdout
    # tampering with the stamp must make the comparison refuse
    path = os.path.join(b, "determinism_kernel.csv")
    text = open(path).read().replace("manifest-sha256: ",
                                     "manifest-sha256: 0dead")
    open(path, "w").write(text)
    proc = run_cli("verify", "--suite", "determinism", "--out", a,
                   "--compare-with", b)
    assert proc.returncode == 2
    assert "hash mismatch" in proc.stderr
