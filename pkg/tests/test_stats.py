import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blm import stats
from blm.fem import TaylorHoodSpace

from conftest import square_mesh


@pytest.fixture(scope="module")
def sq():
    return TaylorHoodSpace(square_mesh(3))


def test_dissipation_rates_examples(sq):
    assert stats.dissipation_rates(sq, np.zeros(sq.n_velocity), 0.01, 0.1) == (0.0, 0.0)
    shear = sq.interpolate_velocity(lambda x, y: (y, 0 * x))
    e0, eM = stats.dissipation_rates(sq, shear, 0.01, 0.1)
    assert e0 == pytest.approx(0.01, rel=1e-13) and eM == pytest.approx(0.01, rel=1e-13)
    rot = sq.interpolate_velocity(lambda x, y: (-y, x))
    e0, eM = stats.dissipation_rates(sq, rot, 0.01, np.full(sq.n_qp, 0.1))
    assert e0 == pytest.approx(0.02, rel=1e-13) and eM == pytest.approx(0.08, rel=1e-13)


def test_kinetic_energy_examples(sq):
    shear = sq.interpolate_velocity(lambda x, y: (y, 0 * x))
    ke, mke = stats.kinetic_energies(sq, shear, None, 0.1, 10.0, 0.1)
    assert ke == pytest.approx(2.0 / 3.0, rel=1e-13) and mke == 0.0
    ke, mke = stats.kinetic_energies(sq, shear, shear, 0.1, 10.0, 0.1)
    assert mke == 0.0
    ke0, _ = stats.kinetic_energies(sq, shear, None, 0.1, 0.0, 0.1)
    assert ke0 == pytest.approx(1.0 / 6.0, rel=1e-13)
    with pytest.raises(ValueError):
        stats.kinetic_energies(sq, shear, None, 0.0, 10.0, 0.1)


def test_series_invariants():
    s = stats.DissipationSeries()
    s.append(0.0, 1.0, 2.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        s.append(0.0, 1.0, 2.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        s.append(1.0, -1.0, 2.0, 1.0, 0.0)
    assert np.array_equal(s.eps, [3.0])


def test_series_csv_roundtrip(tmp_path):
    s = stats.DissipationSeries()
    for k in range(5):
        s.append(0.1 * k, 1.0 / 3 + k, math.pi * k, 2.0, -0.5, 0.25)
    p = tmp_path / "stats.csv"
    s.to_csv(p)
    assert open(p).readline().strip() == "t,eps0,epsM,eps,ke,mke,power_in"
    s2 = stats.DissipationSeries.from_csv(p)
    for col in ("t", "eps0", "epsM", "ke", "mke", "power_in"):
        assert getattr(s2, col) == getattr(s, col)


def _series(t, eps):
    s = stats.DissipationSeries()
    for ti, e in zip(t, eps):
        s.append(ti, e, 0.0, 1.0, 0.0, 0.0, 1.0)
    return s


def test_time_average_examples():
    t = np.linspace(0, 10, 101)
    assert stats.time_average(_series(t, np.full(101, 2.5)), 0.0).eps == pytest.approx(2.5)
    lin = 1.0 + 3.0 * t / 10
    assert stats.time_average(_series(t, lin), 0.0).eps == pytest.approx(2.5, rel=1e-14)
    step = np.where(t < 5, 1.0, 7.0)
    assert stats.time_average(_series(t, step), 0.5).eps == 7.0
    with pytest.raises(ValueError):
        stats.time_average(_series(t[:1], [1.0]), 0.0)
    with pytest.raises(ValueError):
        stats.time_average(_series(t, lin), 1.0)


@settings(max_examples=50, deadline=None)
@given(vals=st.lists(st.floats(0, 10), min_size=4, max_size=30), split=st.integers(1, 100))
def test_trapezoid_additivity(vals, split):
    t = np.arange(len(vals), dtype=float)
    k = 1 + split % (len(vals) - 2)
    whole = stats.trapezoid_average(t, vals)
    left = stats.trapezoid_average(t[:k + 1], vals[:k + 1])
    right = stats.trapezoid_average(t[k:], vals[k:])
    combined = (left * (t[k] - t[0]) + right * (t[-1] - t[k])) / (t[-1] - t[0])
    assert combined == pytest.approx(whole, rel=1e-12, abs=1e-12)


def test_scales_zero_forcing(sq):
    sc = stats.compute_scales(sq, None, 1.0, 0.01)
    assert sc.F == 0.0 and sc.degenerate and sc.L == 1.0 and sc.U == 1.0
    assert sc.Re == pytest.approx(100.0)
    sc = stats.compute_scales(sq, np.zeros(sq.n_velocity), 4.0, 0.5, L_ref=2.0)
    assert sc.degenerate and sc.L == 2.0 and sc.U == 2.0 and sc.Re == pytest.approx(8.0)


def test_scales_forced_against_dense_oracle():
    s = TaylorHoodSpace(square_mesh(8))
    f = s.interpolate_velocity(lambda x, y: (np.sin(np.pi * y), 0 * x))
    sc = stats.compute_scales(s, f, 0.25, 0.01)
    # dense oracle with the same interpolant on a fine midpoint grid per triangle
    xq = s.qpoints
    fq = s.velocity_at_qp(f)
    F = math.sqrt(np.sum(s.qweights * (fq ** 2).sum(1)))
    assert sc.F == pytest.approx(F, rel=1e-10)
    assert sc.F == pytest.approx(math.sqrt(0.5), rel=1e-4)
    grad = math.sqrt(np.sum(s.qweights * np.einsum("qij,qij->q", *(2 * [
        s.velocity_gradient_at_qp(f)]))))
    curl3 = np.sum(s.qweights * np.abs(s.curl_at_qp(f)) ** 3) ** (1 / 3)
    assert sc.L == pytest.approx(min(1.0, F / grad, F / curl3), rel=1e-10)
    assert sc.Re == pytest.approx(0.5 * sc.L / 0.01, rel=1e-12)
    assert not sc.degenerate and xq.shape[1] == 2


def test_fit_examples():
    pts = [(r, 1 + 5 / r) for r in (100, 500, 1000, 2000)]
    res = stats.fit_dissipation(pts, 0.5, 5)
    assert abs(res.a - 1) <= 1e-12 and abs(res.b - 5) <= 1e-12
    assert res.rms_residual <= 1e-14 and res.n_points == 4
    two = stats.fit_dissipation([(100, 0.3), (400, 0.2)])
    assert two.rms_residual <= 1e-15
    assert two.a + two.b / 100 == pytest.approx(0.3)
    with pytest.raises(ValueError):
        stats.fit_dissipation([(100, 1.0), (100, 2.0)])
    assert str(res).startswith("a=")


def test_fit_normal_equations_oracle(rng):
    Re = np.array([100.0, 300.0, 700.0, 1200.0, 2000.0])
    eps = 0.3 + 7 / Re + rng.normal(scale=1e-3, size=5)
    res = stats.fit_dissipation(np.column_stack([Re, eps]))
    x = 1 / Re
    G = np.array([[5, x.sum()], [x.sum(), (x * x).sum()]])
    inv = np.array([[G[1, 1], -G[0, 1]], [-G[1, 0], G[0, 0]]]) / np.linalg.det(G)
    a, b = inv @ np.array([eps.sum(), (x * eps).sum()])
    assert res.a == pytest.approx(a, abs=1e-12) and res.b == pytest.approx(b, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(perm=st.permutations(range(5)))
def test_fit_order_invariant(perm):
    pts = [(100.0, 1.1), (250.0, 0.7), (600.0, 0.66), (1000.0, 0.5), (2000.0, 0.52)]
    base = stats.fit_dissipation(pts)
    res = stats.fit_dissipation([pts[i] for i in perm])
    assert res.a == pytest.approx(base.a, rel=1e-12) and res.b == pytest.approx(base.b,
                                                                                rel=1e-12)


def test_bound_examples():
    assert stats.dissipation_bound(1, 1, 1, 1).value == pytest.approx(7 / 3, rel=1e-15)
    assert stats.dissipation_bound(1.3, 0.7, 1e15, 0.0).value == pytest.approx(1.3 ** 3 / 0.7)
    b1 = stats.dissipation_bound(1.0, 0.5, 100, 0.01).value
    b2 = stats.dissipation_bound(2.0, 0.5, 100, 0.01).value
    assert b2 == pytest.approx(8 * b1, rel=1e-14)
    assert stats.dissipation_bound(1, 1, 1, 1, eps_avg=7 / 3).ratio == pytest.approx(1.0)
    with pytest.raises(ValueError):
        stats.dissipation_bound(0, 1, 1, 1)


def test_sweep_csv(tmp_path):
    rows = [{"Re": 100.0, "eps_avg": 0.1, "U": 0.7, "bound": 0.4, "ratio": 0.25}]
    p = tmp_path / "sweep.csv"
    stats.write_sweep(rows, p)
    assert open(p).readline().strip() == "Re,eps_avg,U,bound,ratio"
    assert stats.read_sweep(p) == rows


def test_power_balance_on_forced_run():
    from blm.verify import energy_audit_run
    res, _ = energy_audit_run(steps=20, n=5)
    eps = np.mean([a.eps0_term + a.epsM_term for a in res.audit])
    power = np.mean([a.power_in for a in res.audit])
    drift = abs(np.mean([a.MKE for a in res.audit]))
    budget = sum(abs(a.residual) for a in res.audit) / len(res.audit)
    assert eps <= power + drift + budget + 1e-12
    assert eps > 0 and power > 0
