import math

import numpy as np
import pytest

from csvortex.algebra import PhysicalParams, VortexNumbers, from_preset, predicted_flux
from csvortex.diagnostics import (
    SolutionReport,
    asymptotic_gaps,
    energy_and_charge,
    flux,
    flux_from_constraints,
    max_principle_check,
    verify,
)
from csvortex.solver import SolutionState, minimize_Jplus
from csvortex.torus import TorusGrid, VortexSet, build_background

G = TorusGrid.square(64)


@pytest.fixture(scope="module")
def a2():
    K, N = from_preset("A2"), VortexNumbers(1, 0)
    bg = build_background(G, VortexSet.of((0.3, 0.4, 1)), VortexSet.of())
    return K, N, bg, minimize_Jplus(K, 150.0, N, bg)


def test_flux_single_vortex(a2):
    K, N, bg, st = a2
    phi = flux(K, 150.0, bg, st)
    assert phi == pytest.approx((4 * math.pi / 3, 2 * math.pi / 3), rel=1e-2)
    assert flux_from_constraints(K, 150.0, bg, st) == pytest.approx(phi, rel=1e-8)


def test_vacuum_flux_zero():
    bg = build_background(G, VortexSet.of(), VortexSet.of())
    z = np.zeros(G.shape)
    st = SolutionState(z, z, 0.0, 0.0, 10.0)
    assert np.allclose(flux(from_preset("A2"), 10.0, bg, st), 0.0, atol=1e-12)
    rep = max_principle_check(from_preset("A2"), VortexNumbers(0, 0), bg, st)
    assert rep.passed and rep.max_eu == (1.0, 1.0)
    table = asymptotic_gaps(bg, [st])
    assert table.gaps[0]["L2_1"] == 0.0


def test_energy_and_charge():
    p = PhysicalParams(0.5, 2.0)
    e, q1, q2 = energy_and_charge((1.0, 2.0), p)
    assert e == 12.0 and q1 / 1.0 == 0.5 and q2 / 2.0 == 0.5
    e2, _, _ = energy_and_charge((1.0, 2.0), PhysicalParams(0.5, 6.0))
    assert e2 == pytest.approx(9 * e)


def test_violation_detected(a2):
    K, N, bg, st = a2
    bad = SolutionState(st.w1, st.w2, st.c1 + math.log(1.5), st.c2, st.lam)
    rep = max_principle_check(K, N, bg, bad)
    assert not rep.passed and rep.violations[0]["component"] == 1


def test_verify_pass_and_roundtrip(a2):
    K, N, bg, st = a2
    rep = verify(K, 150.0, N, bg, st, PhysicalParams.from_lambda(150.0, 1.0))
    assert rep.passed, rep.failures
    assert rep.energy == pytest.approx(rep.v**2 * sum(rep.fluxes), rel=0, abs=0)
    assert SolutionReport.loads(rep.dumps()) == rep


def test_verify_rejects_non_solution(a2):
    K, N, bg, st = a2
    rng = np.random.default_rng(0)
    noise = 0.1 * rng.normal(size=G.shape)
    rep = verify(K, 150.0, N, bg, SolutionState(st.w1 + noise, st.w2, st.c1, st.c2, 150.0))
    assert not rep.passed and rep.failures[0].startswith("residual")


def test_swap_covariance(a2):
    K, N, bg, st = a2
    r = verify(K, 150.0, N, bg, st)
    sw = SolutionState(st.w2, st.w1, st.c2, st.c1, st.lam, converged=st.converged)
    s = verify(K.swapped(), 150.0, VortexNumbers(N.N2, N.N1), bg.swapped(), sw)
    assert s.fluxes == pytest.approx(r.fluxes[::-1], rel=1e-12)
    assert s.max_eu == r.max_eu[::-1]
    assert s.lp_gaps["L2_1"] == r.lp_gaps["L2_2"] and s.lp_gaps["L1_2"] == r.lp_gaps["L1_1"]
    assert s.energy == pytest.approx(r.energy, rel=1e-12)


def test_gaps_monotone_flag():
    K, N = from_preset("A2"), VortexNumbers(1, 0)
    bg = build_background(G, VortexSet.of((0.3, 0.4, 1)), VortexSet.of())
    states = [minimize_Jplus(K, lam, N, bg) for lam in (150.0, 600.0)]
    assert asymptotic_gaps(bg, states).monotone
    assert not asymptotic_gaps(bg, [states[0], SolutionState(states[0].w1, states[0].w2, states[0].c1, states[0].c2, 900.0)]).monotone
