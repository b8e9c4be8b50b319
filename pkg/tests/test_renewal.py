"""Renewal solver: trapezoid convolution, Picard fixed point against closed
forms, the comparison lemma, and the critical growth weight."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shesim.errors import NumericFailure
from shesim.renewal import (RenewalProblem, comparison_check, convolve,
                            critical_beta, picard_solve)
from shesim.walkkernel import WalkKernel, simple_walk


def grid(dt, horizon):
    return dt * np.arange(int(round(horizon / dt)) + 1)


def test_convolve_examples():
    dt = 1 / 128
    ts = grid(dt, 2.0)
    assert np.all(convolve(np.ones_like(ts), np.zeros_like(ts), dt) == 0.0)
    # trapezoid is exact for constants: (1 * 1)(t) = t
    c = convolve(np.ones_like(ts), np.ones_like(ts), dt)
    assert np.allclose(c, ts, atol=1e-12)
    assert c[0] == 0.0
    # exp(-t) * exp(-t) = t exp(-t), second-order accurate
    e = np.exp(-ts)
    assert np.max(np.abs(convolve(e, e, dt) - ts * e)) < 5 * dt ** 2


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(-2.0, 2.0))
def test_convolve_linearity(scale, shift):
    dt = 1 / 64
    ts = grid(dt, 1.0)
    h = np.exp(-ts)
    f1 = np.cos(ts)
    f2 = np.sin(ts + shift)
    lhs = convolve(h, scale * f1 + f2, dt)
    rhs = scale * convolve(h, f1, dt) + convolve(h, f2, dt)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_picard_zero_forcing():
    dt = 1 / 64
    ts = grid(dt, 2.0)
    rep = picard_solve(RenewalProblem(dt=dt, g=np.zeros_like(ts),
                                      h=np.exp(-ts)))
    assert np.all(rep.f == 0.0)


def test_picard_closed_form():
    dt = 1 / 512
    ts = grid(dt, 4.0)
    rep = picard_solve(RenewalProblem(dt=dt, g=np.exp(-ts),
                                      h=0.5 * np.exp(-ts)))
    assert rep.f[512] == pytest.approx(math.exp(-0.5), abs=1e-4)
    assert np.max(np.abs(rep.f - np.exp(-ts / 2))) < 1e-6
    # solution respects the tilted a priori bound
    assert np.all(rep.f <= rep.bound * (1 + 1e-9))


def test_picard_contraction_factor():
    # the weighted change shrinks by at most rho-hat (+ grid error) per sweep
    dt = 1 / 256
    ts = grid(dt, 4.0)
    prob = RenewalProblem(dt=dt, g=np.exp(-ts), h=0.5 * np.exp(-ts))
    rho = prob.contraction_estimate()
    f = prob.g.copy()
    changes = []
    for _ in range(8):
        nxt = prob.g + convolve(prob.h, f, dt)
        changes.append(np.max(np.abs(nxt - f)))
        f = nxt
    ratios = [b / a for a, b in zip(changes, changes[1:])]
    assert all(r <= rho + 0.02 for r in ratios)


def test_picard_refuses_supercritical():
    dt = 1 / 64
    ts = grid(dt, 8.0)
    with pytest.raises(ValueError, match="contraction"):
        picard_solve(RenewalProblem(dt=dt, g=np.ones_like(ts),
                                    h=np.ones_like(ts)))
    # the same kernel is fine after an exponential tilt
    rep = picard_solve(RenewalProblem(dt=dt, g=np.ones_like(ts),
                                      h=np.ones_like(ts), beta=2.0))
    assert np.all(np.isfinite(rep.f))


def test_picard_max_iter_failure():
    dt = 1 / 64
    ts = grid(dt, 4.0)
    with pytest.raises(NumericFailure) as err:
        picard_solve(RenewalProblem(dt=dt, g=np.ones_like(ts),
                                    h=0.99 * np.exp(-0.01 * ts), beta=1.0),
                     tol=1e-14, max_iter=3)
    assert "last_contraction" in err.value.info


def test_grid_halving_is_second_order():
    sols = {}
    for dt in (1 / 128, 1 / 256):
        ts = grid(dt, 3.0)
        sols[dt] = picard_solve(RenewalProblem(dt=dt, g=np.exp(-ts),
                                               h=0.5 * np.exp(-ts))).f
    ts = grid(1 / 128, 3.0)
    exact = np.exp(-ts / 2)
    e1 = np.max(np.abs(sols[1 / 128] - exact))
    e2 = np.max(np.abs(sols[1 / 256][::2] - exact))
    assert 3.5 <= e1 / e2 <= 4.5


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 1.0), st.floats(0.0, 1.0))
def test_monotone_in_forcing(a, b):
    dt = 1 / 64
    ts = grid(dt, 2.0)
    h = 0.4 * np.exp(-ts)
    g1 = a * np.exp(-ts)
    g2 = g1 + b * ts / (1 + ts)
    f1 = picard_solve(RenewalProblem(dt=dt, g=g1, h=h)).f
    f2 = picard_solve(RenewalProblem(dt=dt, g=g2, h=h)).f
    assert np.all(f2 - f1 >= -1e-12)


def test_comparison_verdicts():
    dt = 1 / 256
    ts = grid(dt, 4.0)
    prob = RenewalProblem(dt=dt, g=np.exp(-ts), h=0.5 * np.exp(-ts))
    f = picard_solve(prob).f
    for direction in ("super", "sub"):
        v = comparison_check(prob, f, direction, tol=1e-8)
        assert v.is_valid_candidate and v.ordering_holds
        assert v.max_ordering_violation <= 1e-8
    v_sup = comparison_check(prob, f + 0.1, "super", tol=1e-8)
    assert v_sup.is_valid_candidate and v_sup.ordering_holds
    # F = 0 satisfies 0 <= g + h*0, so it is a valid (dominated) sub-solution
    v_sub = comparison_check(prob, np.zeros_like(f), "sub")
    assert v_sub.is_valid_candidate and v_sub.ordering_holds
    # and it is NOT a super-solution when g > 0 somewhere
    v_bad = comparison_check(prob, np.zeros_like(f), "super")
    assert not v_bad.is_valid_candidate
    with pytest.raises(ValueError):
        comparison_check(prob, f, "sideways")


def test_critical_beta_cases():
    k1 = WalkKernel(simple_walk(1))
    assert critical_beta(k1, 2.0) == pytest.approx(2 * (math.sqrt(5) - 1),
                                                   abs=1e-4)
    k3 = WalkKernel(simple_walk(3))
    assert critical_beta(k3, 0.5) == 0.0          # no growth regime
    assert critical_beta(k3, 1.2) > 0.0
    # recurrent kernel: a positive root always exists
    assert critical_beta(k1, 0.3) > 0.0
    with pytest.raises(ValueError):
        critical_beta(k1, 0.0)


def test_problem_validation():
    ts = grid(1 / 32, 1.0)
    with pytest.raises(ValueError):
        RenewalProblem(dt=1 / 32, g=-np.ones_like(ts), h=np.ones_like(ts))
    with pytest.raises(ValueError):
        RenewalProblem(dt=0.0, g=np.ones_like(ts), h=np.ones_like(ts))
    prob = RenewalProblem(dt=1 / 32, g=np.exp(-ts), h=0.5 * np.exp(-ts))
    assert prob.tail_mass_proxy() < 0.5
