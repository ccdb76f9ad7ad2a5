import csv
import io

import numpy as np
import pytest

from nlsnf.lattice import Lattice, State, strip_sup
from nlsnf.nonlinearity import SeriesSpec, preset_power
from nlsnf.polynomial import Polynomial, canonical, random_real_state
from nlsnf.lattice import make_index
from nlsnf.potential import frequencies, sample_potential
from nlsnf.simulate import (
    BlowUpError,
    StrangIntegrator,
    _cumtrapz,
    drift_sweep,
    energy_order_study,
    flow_poly_hamiltonian,
    initial_datum,
    loglog_slope,
    observables,
    pcrux_check,
    pcrux_experiment,
    simulate,
    simulate_batch,
    step_strang,
)

NONGAUGE = SeriesSpec({(2, 1): 0.2, (1, 2): 0.2, (3, 0): 0.1, (0, 3): 0.1, (2, 2): 0.5})


@pytest.fixture(scope="module")
def f8():
    return frequencies(sample_potential(2.0, 1.0, Lattice(1, 8), 11))


def _site(lat, a):
    return int(np.flatnonzero((lat.sites == np.atleast_1d(a)).all(axis=1))[0])


def test_linear_flow_matches_rotation(f8):
    z0 = initial_datum(f8.lattice, 0.1, 0.5, seed=1)
    tr = simulate(z0, 3.0, 1e-2, 50, f8, SeriesSpec())
    for t, xi in zip(tr.times, tr.xi):
        assert np.max(np.abs(xi - np.exp(-1j * f8.omega * t) * z0.xi)) < 1e-13
    o = observables(tr, 0.5, 3)
    assert np.max(np.abs(o.actions - o.actions[0])) < 1e-13
    assert np.max(o.drift) < 1e-13


def test_single_mode_exact(f8):
    # |u| is constant for a single Fourier mode, so the nonlinearity is a uniform phase
    lat, eps, a = f8.lattice, 0.1, 2
    xi0 = np.zeros(lat.size, complex)
    s = _site(lat, a)
    xi0[s] = eps
    spec = SeriesSpec({(2, 2): 0.5, (3, 3): 0.2})
    tr = simulate(State.from_xi(lat, xi0), 100.0, 1e-3, 10000, f8, spec)
    Gp = 2 * 0.5 * eps ** 2 + 3 * 0.2 * eps ** 4
    exact = eps * np.exp(-1j * (f8.omega[s] + Gp) * tr.times)
    assert np.max(np.abs(tr.xi[:, s] - exact)) < 1e-10
    assert np.max(np.abs(np.sum(np.abs(tr.xi) ** 2, axis=1) - eps ** 2)) < 1e-10


def test_step_is_first_order_close(f8):
    z0 = initial_datum(f8.lattice, 0.05, 0.5, seed=2)
    d = [np.max(np.abs(step_strang(z0, h, f8, preset_power(1)).z - z0.z)) for h in (1e-3, 5e-4)]
    assert d[0] / d[1] == pytest.approx(2.0, rel=0.05)


@pytest.mark.parametrize("spec", [preset_power(1), NONGAUGE], ids=["gauge", "generic"])
def test_strang_energy_order(f8, spec):
    z0 = initial_datum(f8.lattice, 0.3, 0.5, seed=3)
    study = energy_order_study(z0, 1.0, 0.02, f8, spec)
    assert study["ratio"] == pytest.approx(4.0, abs=0.5)


@pytest.mark.parametrize("spec", [preset_power(1), NONGAUGE], ids=["gauge", "generic"])
def test_time_reversal(f8, spec):
    z0 = initial_datum(f8.lattice, 0.2, 0.5, seed=4)
    fwd = simulate(z0, 1.0, 1e-2, 100, f8, spec)
    back = simulate(fwd.state(-1), -1.0, -1e-2, 100, f8, spec)
    assert np.max(np.abs(back.xi[-1] - z0.xi)) < 1e-12


def test_mass_conserved_gauge(f8):
    z0 = initial_datum(f8.lattice, 0.2, 0.5, seed=5)
    o = observables(simulate(z0, 5.0, 1e-2, 50, f8, preset_power(2)), 0.5, 3)
    assert np.max(np.abs(o.sum_I - o.sum_I[0])) < 1e-13 * o.sum_I[0] * 50


def test_batch_equals_single(f8):
    zs = [initial_datum(f8.lattice, e, 0.5, seed=6) for e in (0.1, 0.05)]
    batch = simulate_batch(zs, 0.5, 1e-2, 10, f8, NONGAUGE)
    for z, tb in zip(zs, batch):
        ts = simulate(z, 0.5, 1e-2, 10, f8, NONGAUGE)
        assert np.max(np.abs(ts.xi - tb.xi)) < 1e-15
        assert np.allclose(ts.energy, tb.energy, rtol=0, atol=1e-15)


def test_lean_matches_full(f8):
    z0 = initial_datum(f8.lattice, 0.1, 0.5, seed=7)
    full = observables(simulate(z0, 0.5, 1e-2, 10, f8, NONGAUGE), 0.5, 3)
    lean = observables(simulate(z0, 0.5, 1e-2, 10, f8, NONGAUGE, lean=True, rho=0.5, N=3), 0.5, 3)
    for k in ("sum_I", "norm_rho", "tail", "drift"):
        assert np.allclose(getattr(full, k), getattr(lean, k), rtol=1e-14, atol=0)
    assert lean.actions is None and lean.drift[0] == 0


def test_integrator_layout_roundtrip(f8):
    integ = StrangIntegrator(f8, preset_power(1), 1e-2)
    xi = random_real_state(f8.lattice, np.random.default_rng(0)).xi
    c = integ.to_grid_coeffs(xi)
    assert np.array_equal(integ.from_grid_coeffs(c), xi)
    assert np.allclose(integ.spectral(integ.physical(c)), c, atol=1e-15)
    # the grid function is sum xi_a e^{iax}
    x = 2 * np.pi * np.arange(integ.M) / integ.M
    u = np.exp(1j * np.outer(x, f8.lattice.sites[:, 0])) @ xi
    assert np.allclose(integ.physical(c), u, atol=1e-13)


def test_guards(f8):
    z0 = initial_datum(f8.lattice, 0.1, 0.5)
    with pytest.raises(ValueError):
        simulate(z0, 1.0, 0.3, 1, f8, preset_power(1))
    with pytest.raises(ValueError):
        simulate(z0, 1.0, 0.1, 0, f8, preset_power(1))
    bad = State(f8.lattice, np.concatenate([z0.xi, 2 * z0.eta]))
    with pytest.raises(ValueError):
        simulate(bad, 1.0, 0.1, 1, f8, preset_power(1))


def test_blowup_guard(f8):
    z0 = initial_datum(f8.lattice, 0.1, 0.5)
    with pytest.raises(BlowUpError):
        simulate(z0, 1.0, 0.1, 1, f8, preset_power(1), blowup_factor=0.5)
    big = initial_datum(f8.lattice, 50.0, 0.5)
    with pytest.raises(BlowUpError):
        simulate(big, 1.0, 0.1, 1, f8, NONGAUGE)


def test_initial_datum(f8):
    z = initial_datum(f8.lattice, 1e-2, 0.5, seed=3)
    assert z.is_real(0) and strip_sup(z, 1.0) == pytest.approx(1e-2, rel=1e-12)
    assert np.array_equal(z.z, initial_datum(f8.lattice, 1e-2, 0.5, seed=3).z)


def test_observables_csv(f8):
    tr = simulate(initial_datum(f8.lattice, 0.1, 0.5), 0.2, 1e-2, 5, f8, preset_power(1))
    o = observables(tr, 0.5, 3, strip_width=0.5)
    rows = list(csv.reader(io.StringIO(o.to_csv())))
    assert rows[0] == ["t", "H", "sum_I", "norm_rho", "tail", "drift", "strip_sup"]
    assert len(rows) == len(tr) + 1
    assert float(rows[-1][0]) == pytest.approx(0.2)
    assert all(o.tail <= o.norm_rho)


def test_helpers():
    x = np.geomspace(1e-3, 1e-1, 5)
    assert loglog_slope(x, 3 * x ** 2.5) == pytest.approx(2.5)
    t = np.linspace(0, 2, 41)
    y = np.sin(t)
    assert _cumtrapz(y, t)[-1] == pytest.approx(np.trapezoid(y, t) if hasattr(np, "trapezoid") else np.trapz(y, t))


def test_drift_sweep_scaling(f8):
    rows = drift_sweep(f8, preset_power(1), [1e-2, 1e-3], 0.5, 2.0, 1e-2, cadence=20)
    assert all(r["max_drift"] <= r["bound"] for r in rows)
    assert all(r["mass_error"] < 1e-12 for r in rows)
    assert loglog_slope([r["eps"] for r in rows], [r["max_drift"] for r in rows]) > 2.5


# -- polynomial flows -------------------------------------------------------------------------
# RK4 is only near-unitary while omega h is small, hence the short lattice


@pytest.fixture(scope="module")
def f3():
    return frequencies(sample_potential(2.0, 1.0, Lattice(1, 3), 11))

def test_poly_flow_linear_part(f3):
    z0 = random_real_state(f3.lattice, np.random.default_rng(1), decay=0.5)
    tr = flow_poly_hamiltonian([], z0, 1.0, 1e-3, f3)
    assert np.max(np.abs(tr.xi[-1] - np.exp(-1j * f3.omega) * z0.xi)) < 1e-9


def test_resonant_flow_keeps_actions(f3):
    lat = f3.lattice
    Z = Polynomial({
        canonical([make_index((1,), 1), make_index((2,), 1), make_index((1,), -1), make_index((2,), -1)]): 0.7,
        canonical([make_index((0,), 1), make_index((0,), -1)] * 2): -0.3,
    })
    z0 = random_real_state(lat, np.random.default_rng(2), decay=0.3)
    tr = flow_poly_hamiltonian([Z], z0, 2.0, 1e-3, f3, cadence=100)
    I = np.abs(tr.xi) ** 2
    assert np.max(np.abs(I - I[0])) < 1e-10
    assert np.max(np.abs(tr.energy - tr.energy[0])) < 1e-10


def test_pcrux_check(f8):
    rows = pcrux_experiment(f8, 2, 3, 0.5, 2.0, 0.01, seed=1)
    assert [r["k"] for r in rows] == [3, 4]
    assert all(r["tail_ok"] and r["norm_ok"] for r in rows)
    with pytest.raises(ValueError):
        Z = Polynomial({canonical([make_index((0,), 1), make_index((0,), -1)] * 2): 1.0,
                        canonical([make_index((0,), 1), make_index((0,), -1)] * 3): 1.0})
        pcrux_check(Z, None, 0.5, 3)
