import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from csvortex.algebra import (
    CouplingMatrix,
    GaugePreset,
    PhysicalParams,
    ThresholdUndefined,
    VortexNumbers,
    from_preset,
    kappa_from_lambda,
    kappa_threshold,
    lambda_from_kappa,
    nonexistence_threshold,
    phi_squared_from_u,
    predicted_charge,
    predicted_energy,
    predicted_flux,
    vacuum_moduli,
)

couplings = st.builds(
    CouplingMatrix,
    a=st.floats(1.6, 4.0), b=st.floats(0.0, 1.5), c=st.floats(0.0, 1.5), d=st.floats(1.6, 4.0),
)
numbers = st.builds(VortexNumbers, st.integers(0, 5), st.integers(0, 5))


@pytest.mark.parametrize("name, tup", [("A2", (2, 1, 1, 2)), ("B2", (2, 1, 2, 2)), ("G2", (2, 1, 3, 2)), ("A1xA1", (2, 0, 0, 2))])
def test_presets(name, tup):
    K = from_preset(name)
    assert K.as_tuple() == tup
    assert from_preset(GaugePreset(name)) == K


def test_invalid_coupling_rejected():
    with pytest.raises(ValueError):
        CouplingMatrix(1, 2, 2, 1)  # ad - bc < 0
    with pytest.raises(ValueError):
        CouplingMatrix(-1, 0, 0, 1)
    with pytest.raises(ValueError):
        from_preset("C3")


@given(couplings)
def test_inverse_is_inverse(K):
    assert np.allclose(K.matrix() @ K.inverse(), np.eye(2), atol=1e-12)


def test_vacuum_moduli():
    assert vacuum_moduli(from_preset("A2"), 1.0) == pytest.approx((1.0, 1.0), rel=1e-14)
    assert vacuum_moduli(from_preset("G2"), 1.0) == pytest.approx((3.0, 5.0), rel=1e-14)
    assert vacuum_moduli(from_preset("B2"), 2.0) == pytest.approx((6.0, 8.0), rel=1e-14)


def test_predicted_flux_a2():
    K = from_preset("A2")
    assert predicted_flux(K, VortexNumbers(1, 0)) == pytest.approx((4 * math.pi / 3, 2 * math.pi / 3), rel=1e-14)
    assert predicted_flux(K, VortexNumbers(1, 1)) == pytest.approx((2 * math.pi, 2 * math.pi), rel=1e-14)


def test_energy_and_charge_consistency():
    K, N = from_preset("G2"), VortexNumbers(2, 1)
    p = predicted_flux(K, N)
    assert predicted_energy(K, N, 1.3) == pytest.approx(1.3**2 * sum(p), rel=1e-14)
    q = predicted_charge(K, N, 0.7)
    assert q[0] / p[0] == pytest.approx(0.7) and q[1] / p[1] == pytest.approx(0.7)


@given(couplings, numbers, st.floats(0.2, 3.0))
def test_energy_is_v2_times_total_flux(K, N, v):
    assert predicted_energy(K, N, v) == pytest.approx(v**2 * sum(predicted_flux(K, N)), rel=1e-12, abs=1e-12)


def test_energy_g2_single_vortex():
    # weight of N_1 is |phi_0^1|^2 / v^2 = 3
    assert predicted_energy(from_preset("G2"), VortexNumbers(1, 0), 1.0) == pytest.approx(6 * math.pi, rel=1e-14)
    assert predicted_energy(from_preset("A2"), VortexNumbers(1, 1), 1.0) == pytest.approx(4 * math.pi, rel=1e-14)


def test_threshold_a2_value():
    assert nonexistence_threshold(from_preset("A2"), VortexNumbers(1, 1), 1.0) == pytest.approx(8 * math.pi, rel=1e-14)


def test_threshold_vacuum_undefined():
    with pytest.raises(ThresholdUndefined):
        nonexistence_threshold(from_preset("A2"), VortexNumbers(0, 0), 1.0)


def test_threshold_scalar_limit():
    # b = c = 0, a = d = 2 reduces to the scalar necessary condition 16 pi N / |Omega|
    K = from_preset("A1xA1")
    assert nonexistence_threshold(K, VortexNumbers(3, 1), 2.0) == pytest.approx(16 * math.pi * 3 / 2.0)


@given(couplings, numbers, st.floats(0.1, 10.0))
def test_threshold_scales_inverse_area(K, N, area):
    if N.total == 0:
        return
    t1 = nonexistence_threshold(K, N, 1.0)
    assert nonexistence_threshold(K, N, area) == pytest.approx(t1 / area, rel=1e-12)


@given(couplings, numbers)
def test_threshold_swap_symmetry(K, N):
    if N.total == 0:
        return
    swapped = nonexistence_threshold(K.swapped(), VortexNumbers(N.N2, N.N1), 1.0)
    assert swapped == pytest.approx(nonexistence_threshold(K, N, 1.0), rel=1e-12)


@given(st.floats(0.1, 10.0), st.floats(0.01, 10.0))
def test_kappa_lambda_roundtrip(v, kappa):
    assert kappa_from_lambda(v, lambda_from_kappa(v, kappa)) == pytest.approx(kappa, rel=1e-12)
    assert PhysicalParams(kappa, v).lam == pytest.approx(4 * v**4 / kappa**2, rel=1e-14)


def test_kappa_threshold_scales_with_v_squared():
    K, N = from_preset("A2"), VortexNumbers(1, 1)
    assert kappa_threshold(K, N, 1.0, 2.0) == pytest.approx(4.0 * kappa_threshold(K, N, 1.0, 1.0), rel=1e-14)


def test_phi_squared_at_vacuum_matches_moduli():
    for name in ("A2", "B2", "G2"):
        K = from_preset(name)
        assert phi_squared_from_u(K, 1.5, 1.0, 1.0) == pytest.approx(vacuum_moduli(K, 1.5), rel=1e-14)
