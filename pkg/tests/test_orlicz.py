import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from paratrunc import orlicz
from paratrunc.orlicz import PowerNFunction, conjugate, psi_from, shifted, tensor_maps


def grid_conjugate(phi, s, tmax=10.0, step=1e-4):
    t = np.arange(0.0, tmax + step, step)
    return float(np.max(s * t - phi.phi(t)))


def test_quadratic_self_conjugate():
    assert conjugate(PowerNFunction(2), 3.0) == pytest.approx(4.5, rel=1e-14)


def test_quartic_conjugate_against_grid_max():
    phi = PowerNFunction(4)
    assert conjugate(phi, 1.0) == pytest.approx(0.75, rel=1e-14)
    assert grid_conjugate(phi, 1.0) == pytest.approx(0.75, abs=1e-7)


def test_cubic_conjugate_of_derivative():
    phi = PowerNFunction(3)
    s = float(phi.dphi(2.0))
    assert s == 4.0
    assert conjugate(phi, s) == pytest.approx(16 / 3, rel=1e-14)
    assert grid_conjugate(phi, s) == pytest.approx(16 / 3, abs=1e-6)
    assert conjugate(phi, s) / phi.phi(2.0) == pytest.approx(2.0)


def test_conjugate_rejects_negative():
    with pytest.raises(ValueError):
        conjugate(PowerNFunction(2), -1.0)


def test_power_needs_p_above_one():
    with pytest.raises(ValueError):
        PowerNFunction(1.0)


def test_psi_examples():
    assert psi_from(PowerNFunction(2)).p == 2
    psi = psi_from(PowerNFunction(4))
    assert float(psi.dphi(3.0)) == pytest.approx(9.0)
    assert float(psi.phi(2.0)) == pytest.approx(8 / 3)
    # generic path: quadrature of sqrt(phi'(t) t)
    gen = orlicz.NFunction(lambda t: t ** 3, name="quartic")
    assert float(psi_from(gen).phi(2.0)) == pytest.approx(8 / 3, rel=1e-10)


def test_psi_characteristics_follow_phi():
    phi = orlicz.NFunction(lambda t: t ** 2 + t ** 1.5, name="mix")
    c1, c2 = phi.characteristics()
    d1, d2 = psi_from(phi).characteristics()
    assert 0 < c1 <= c2 < 10
    assert 0 < d1 <= d2 < 10


def test_shifted_examples():
    phi = PowerNFunction(3)
    assert shifted(phi, 0.0) is phi
    t = np.linspace(0.1, 5, 7)
    for a in (0.3, 2.0):
        q = orlicz.NFunction(lambda s, a=a: PowerNFunction(2).dphi(a + s) * s / (a + s))
        assert np.allclose(q.phi(t), t ** 2 / 2, rtol=1e-12)
    base = phi.delta2()[0]
    for a in (0, 0.1, 1, 10, 100):
        s = np.logspace(-3, 3, 61)
        d = float(np.max(shifted(phi, a).phi(2 * s) / shifted(phi, a).phi(s)))
        assert d <= 2 * base


def test_tensor_map_examples():
    out = tensor_maps(PowerNFunction(2), np.array([3.0, -1.0]), np.array([1.0, 1.0]))
    assert np.allclose(out["A_P"], [3, -1]) and np.allclose(out["V_P"], [3, -1])
    out = tensor_maps(PowerNFunction(4), np.array([2.0, 0.0]), np.array([0.0, 0.0]))
    assert np.allclose(out["V_P"], [4, 0])
    assert np.allclose(out["A_Q"], 0) and np.allclose(out["V_Q"], 0)


def test_tensor_map_equal_arguments_flagged():
    P = np.array([1.0, 2.0])
    out = tensor_maps(PowerNFunction(3), P, P)
    assert out["degenerate"] and out["r1"] == 1 and out["r2"] == 1


def test_tabulated_matches_power():
    t = np.logspace(-8, 8, 161)
    tab = orlicz.tabulated(t, t ** 2, name="t3")
    s = np.logspace(-4, 4, 33)
    assert np.allclose(tab.phi(s), s ** 3 / 3, rtol=1e-6)
    assert np.allclose(tab.conj(s), s ** 1.5 / 1.5, rtol=1e-5)


def test_tabulated_rejects_nonconvex():
    t = np.logspace(-2, 2, 10)
    d = t.copy()
    d[5] = d[4] / 2
    with pytest.raises(ValueError):
        orlicz.tabulated(t, d)


def test_from_spec_table(tmp_path):
    t = np.logspace(-6, 6, 121)
    path = tmp_path / "phi.csv"
    path.write_text("t,dphi\n" + "\n".join(f"{a:.17g},{a:.17g}" for a in t))
    phi = orlicz.from_spec(f"table:{path}")
    assert float(phi.phi(2.0)) == pytest.approx(2.0, rel=1e-6)
    with pytest.raises(ValueError):
        orlicz.from_spec("exp:1")


def test_invariants_on_power_kinds():
    t = np.logspace(-4, 4, 81)
    for p in (1.5, 2, 3):
        phi = PowerNFunction(p)
        assert phi.phi(0.0) == 0
        assert np.all(np.diff(phi.dphi(t)) >= 0)
        assert np.all(phi.phi(t) <= t * phi.dphi(t) * (1 + 1e-14))
        assert np.all(t * phi.dphi(t) <= phi.phi(2 * t))


@settings(max_examples=60, deadline=None)
@given(p=st.floats(1.2, 5.0), s=st.floats(1e-3, 1e3))
def test_legendre_matches_closed_form(p, s):
    phi = PowerNFunction(p)
    num = orlicz.legendre(phi.phi, phi.dphi, s)
    assert float(num) == pytest.approx(float(phi.conj(s)), rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(p=st.sampled_from([1.5, 2.0, 3.0]), t=st.floats(1e-3, 1e3), s=st.floats(1e-3, 1e3),
       delta=st.sampled_from([0.1, 0.5, 1.0]))
def test_young_gap_nonnegative(p, t, s, delta):
    gap = orlicz.young_gap(PowerNFunction(p), t, s, delta)
    assert gap >= -1e-12 * max(1.0, t * s)
