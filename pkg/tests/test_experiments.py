"""Experiment drivers: scale function, KS machinery, local tests,
dissipation, and the regime classifier."""

import math

import numpy as np
import pytest
import scipy.stats

from shesim.errors import SingularIntegrand
from shesim.experiments import (CLT_MAX_DISCARD_FRACTION, NormTrajectory,
                                ScaleFunction, clt_increment_test,
                                dissipation_experiment, ks_statistic,
                                ks_threshold, lil_envelope_export,
                                local_increment_run, regime_classify,
                                rn_ratio_test)
from shesim.noise import NoisePlan
from shesim.sde import (Box, Nonlinearity, ProfileSpec, SolverConfig,
                        profile_constant, run_replicated)
from shesim.walkkernel import WalkKernel, simple_walk

K1 = WalkKernel(simple_walk(1))


# ----------------------------------------------------------------------
# scale function
# ----------------------------------------------------------------------
def test_scale_function_examples():
    lin = ScaleFunction(Nonlinearity.linear(1.0), z0=1.0)
    assert lin(1.0) == 0.0
    assert lin(math.e) == pytest.approx(1.0, abs=1e-12)
    lin2 = ScaleFunction(Nonlinearity.linear(2.0), z0=0.5)
    assert lin2(0.5 * math.e ** 2) == pytest.approx(1.0, abs=1e-12)
    sat = ScaleFunction(Nonlinearity.named("saturating"), z0=1.0)
    # integral of (1 + w)/w from 1 to 2
    assert sat(2.0) == pytest.approx(1.0 + math.log(2.0), abs=1e-9)
    assert sat(np.array([1.0, 2.0]))[1] == pytest.approx(1.0 + math.log(2.0),
                                                         abs=1e-9)


def test_scale_function_errors():
    lin = ScaleFunction(Nonlinearity.linear(1.0), z0=1.0)
    with pytest.raises(ValueError):
        lin(0.0)
    with pytest.raises(ValueError):
        lin(-1.0)
    with pytest.raises(ValueError):
        ScaleFunction(Nonlinearity.linear(1.0), z0=0.0)
    vanishing = Nonlinearity.custom(lambda z: z * (z - 1.5), lip=10.0,
                                    ell=0.0, name="vanishing")
    s = ScaleFunction(vanishing, z0=1.0)
    with pytest.raises(SingularIntegrand):
        s(2.0)   # sigma has a root at 1.5 inside the range
    with pytest.raises(SingularIntegrand):
        ScaleFunction(Nonlinearity.linear(0.0), z0=1.0)(2.0)


# ----------------------------------------------------------------------
# KS machinery
# ----------------------------------------------------------------------
def test_ks_statistic_matches_scipy():
    rng = np.random.default_rng(1)
    for n in (10, 257, 1000):
        x = rng.normal(size=n)
        assert ks_statistic(x) == pytest.approx(
            scipy.stats.kstest(x, "norm").statistic, abs=1e-12)
    assert ks_threshold(10000) == pytest.approx(1.36 / 100 * 1.5)


# ----------------------------------------------------------------------
# norm trajectory chain
# ----------------------------------------------------------------------
def test_norm_chain_inequality_from_simulation():
    box = Box((17,))
    cfg = SolverConfig(dt=5e-3, horizon=0.5,
                       snapshot_times=tuple(np.linspace(0, 0.5, 6)))
    plan = NoisePlan(seed=40, dt_min=5e-3)
    res = run_replicated(K1, box, Nonlinearity.linear(1.0),
                         profile_constant(box, 1.0), cfg, plan, 32)
    traj = NormTrajectory.from_result(res)
    assert traj.chain_violation() <= 0.0


# ----------------------------------------------------------------------
# shared local-increment run, CLT and ratio tests
# ----------------------------------------------------------------------
@pytest.fixture(scope="module")
def pam_local_data():
    box = Box((33,))
    return local_increment_run(K1, box, Nonlinearity.linear(1.0),
                               profile_constant(box, 1.0), t=0.5,
                               taus=(0.04, 0.01, 0.0025),
                               sites=((-6,), (-2,), (2,), (6,)),
                               replicas=600, dt=1.25e-4, seed=41,
                               scheme="split-exact-linear")


def test_local_run_validation():
    box = Box((33,))
    with pytest.raises(ValueError, match="dt"):
        local_increment_run(K1, box, Nonlinearity.linear(1.0),
                            profile_constant(box, 1.0), t=0.5, taus=(0.01,),
                            sites=((0,),), replicas=4, dt=1e-3, seed=1)
    with pytest.raises(ValueError, match="distinct"):
        local_increment_run(K1, box, Nonlinearity.linear(1.0),
                            profile_constant(box, 1.0), t=0.5, taus=(0.04,),
                            sites=((0,), (0,)), replicas=4, dt=2e-3, seed=1)


def test_clt_statistics_shrink_with_tau(pam_local_data):
    rep = clt_increment_test(pam_local_data, Nonlinearity.linear(1.0))
    assert not rep.degenerate and rep.valid
    by_tau = {s.tau: s for s in rep.stats}
    assert by_tau[0.04].ks_pooled > by_tau[0.0025].ks_pooled
    assert by_tau[0.0025].ks_pooled < 0.08   # lenient at 600 replicas
    assert rep.max_discard_fraction < CLT_MAX_DISCARD_FRACTION


def test_clt_scale_equivariance_linear_family(pam_local_data):
    # amplitude scaling u -> c u leaves the linear family's sigma fixed and
    # shifts only the scale function's base point; eta and hence the KS
    # statistics are exactly invariant
    import copy
    a = clt_increment_test(pam_local_data, Nonlinearity.linear(1.0))
    scaled = copy.copy(pam_local_data)
    c = 3.7
    scaled.u_base = c * pam_local_data.u_base
    scaled.u_after = {k: c * v for k, v in pam_local_data.u_after.items()}
    b = clt_increment_test(scaled, Nonlinearity.linear(1.0), z0=c * 1.0)
    for sa, sb in zip(a.stats, b.stats):
        assert sa.ks_pooled == pytest.approx(sb.ks_pooled, abs=1e-9)
    # the base point alone never matters (differences of logarithms)
    d = clt_increment_test(pam_local_data, Nonlinearity.linear(1.0), z0=2.0)
    for sa, sd in zip(a.stats, d.stats):
        assert sa.ks_pooled == pytest.approx(sd.ks_pooled, abs=1e-9)


def test_increment_second_moment_scaling(pam_local_data):
    # E|u_{t+tau} - u_t|^2 / tau approaches E sigma(u_t)^2 as tau shrinks
    sig = Nonlinearity.linear(1.0)
    target = float(np.mean(sig(pam_local_data.u_base) ** 2))
    for tau in pam_local_data.taus:
        inc = pam_local_data.u_after[tau] - pam_local_data.u_base
        ratio = float(np.mean(inc ** 2)) / tau
        assert abs(ratio / target - 1.0) < 0.15


def test_clt_degenerate_verdict():
    box = Box((17,))
    data = local_increment_run(K1, box, Nonlinearity.zero(),
                               profile_constant(box, 1.0), t=0.1,
                               taus=(0.04,), sites=((0,),), replicas=8,
                               dt=2e-3, seed=42)
    rep = clt_increment_test(data, Nonlinearity.zero())
    assert rep.degenerate


def test_rn_ratio_exceedance_decreases(pam_local_data):
    rep = rn_ratio_test(pam_local_data, Nonlinearity.linear(1.0))
    assert rep.strictly_decreasing()
    assert all(s.discard_fraction < 0.01 for s in rep.stats)


def test_rn_ratio_single_site_limit():
    # no interaction: the window increment is sum sigma(u_s) dB_s, so the
    # ratio matches sigma(u_t) up to the in-window drift of u (order
    # q^2 sqrt(tau)), far inside the 10% band at these parameters
    from shesim.walkkernel import lazy_walk, WalkKernel as WK
    lazy = WK(lazy_walk(1))
    box = Box((1,))
    data = local_increment_run(lazy, box, Nonlinearity.linear(0.3),
                               profile_constant(box, 1.0), t=0.2,
                               taus=(0.01, 0.0025), sites=((0,),),
                               replicas=400, dt=1.25e-4, seed=43)
    rep = rn_ratio_test(data, Nonlinearity.linear(0.3))
    assert all(s.exceedance < 0.05 for s in rep.stats)


def test_lil_envelope_export_shape():
    box = Box((17,))
    rows = lil_envelope_export(K1, box, Nonlinearity.linear(1.0),
                               profile_constant(box, 1.0), t=0.5,
                               tau_max=0.05, dt=1e-3, site=(0,), seed=44)
    assert rows.shape == (50, 4)
    assert np.all(np.diff(rows[:, 2]) >= 0)       # running max
    assert np.all(np.isfinite(rows[:, :3]))


# ----------------------------------------------------------------------
# dissipation
# ----------------------------------------------------------------------
def test_dissipation_noise_free_matches_local_clt_exponent():
    # sigma = 0 on a big box: deterministic, one replica, slope ~ -d/2
    k3 = WalkKernel(simple_walk(3))
    box = Box((32, 32, 32))
    rep = dissipation_experiment(k3, box, Nonlinearity.zero(),
                                 ProfileSpec("delta"), horizon=40.0, dt=0.1,
                                 replicas=1, seed=45, scheme="euler",
                                 n_boot=10)
    assert rep.fit_slope == pytest.approx(-1.5, abs=0.2)
    assert not rep.warnings
    assert rep.target_exponent == 1.5


def test_dissipation_requires_transient_kernel():
    with pytest.raises(ValueError):
        dissipation_experiment(K1, Box((33,)), Nonlinearity.zero(),
                               ProfileSpec("delta"), horizon=20.0, dt=0.1,
                               replicas=1, seed=46)


def test_dissipation_warns_beyond_wrap_safe():
    k3 = WalkKernel(simple_walk(3))
    box = Box((8, 8, 8))   # wrap-safe horizon is 16
    rep = dissipation_experiment(k3, box, Nonlinearity.zero(),
                                 ProfileSpec("delta"), horizon=24.0, dt=0.1,
                                 replicas=1, seed=47, scheme="euler",
                                 record_times=tuple(np.arange(0.0, 24.1, 1.0)),
                                 n_boot=5)
    assert rep.warnings
    assert rep.fit_window[1] <= 16.0 + 1e-9   # clipped to the safe bound


# ----------------------------------------------------------------------
# regime classification
# ----------------------------------------------------------------------
def test_regime_classification_cases():
    k3 = WalkKernel(simple_walk(3))
    low = regime_classify(0.5, 0.5, k3)
    assert low.label == "dissipative-bound"
    assert low.lip_criterion == pytest.approx(0.19, abs=0.01)
    hot = regime_classify(1.2, 1.2, k3)
    assert hot.label == "growth-bound"
    assert hot.ell_criterion == pytest.approx(1.09, abs=0.01)
    assert hot.growth_rate_lower > 0.0
    mid = regime_classify(1.2, 0.9, k3)
    assert mid.label == "indeterminate"
    rec = regime_classify(1.0, 0.5, K1)
    assert "recurrent" in rec.label
    with pytest.raises(ValueError):
        regime_classify(0.5, 0.9, k3)
