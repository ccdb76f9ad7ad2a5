import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nlsnf.lattice import (
    Index,
    Lattice,
    State,
    analytic_constant,
    from_function,
    geometric_state,
    load_state,
    make_index,
    norm_rho,
    read_grid,
    save_state,
    strip_sup,
    tail_norm,
    to_function,
    to_grid,
    write_grid,
)


def test_sites_box_and_order():
    lat = Lattice(2, 1)
    assert lat.size == 9
    assert [tuple(s) for s in lat.sites[:3]] == [(-1, -1), (-1, 0), (-1, 1)]
    assert (1, 1) in lat and (2, 0) not in lat
    with pytest.raises(KeyError):
        lat.position((2, 0))


def test_slots_roundtrip():
    lat = Lattice(2, 2)
    for s in range(2 * lat.size):
        assert lat.slot(lat.index_of_slot(s)) == s


def test_weights_are_euclidean():
    lat = Lattice(2, 2)
    i = lat.position((1, 1))
    assert lat.moduli[i] == pytest.approx(math.sqrt(2))
    assert lat.max_modulus == pytest.approx(2 * math.sqrt(2))


def test_bad_inputs():
    with pytest.raises(ValueError):
        Lattice(0, 3)
    with pytest.raises(ValueError):
        make_index(1, 0)
    lat = Lattice(1, 2)
    with pytest.raises(ValueError):
        norm_rho(State.zeros(lat), -0.1)
    with pytest.raises(ValueError):
        norm_rho(State(lat, np.full(2 * lat.size, np.nan)), 0.0)


def test_norm_zero_state():
    assert norm_rho(State.zeros(Lattice(1, 3)), 2.0) == 0.0


@pytest.mark.parametrize("rho", [0.0, 0.7, 3.0])
def test_norm_single_zero_mode(rho):
    z = State.from_coeffs(Lattice(1, 3), {make_index(0, 1): 1.0})
    assert norm_rho(z, rho) == 1.0


def test_norm_hand_value():
    z = State.from_coeffs(Lattice(1, 3), {make_index(1, 1): 0.5, make_index(-1, -1): 0.5})
    assert norm_rho(z, 1.0) == pytest.approx(math.e, rel=1e-15)


def test_real_state_pairs():
    lat = Lattice(1, 2)
    z = State.from_xi(lat, [1, 2j, 3, 4, 5 - 1j])
    assert z.is_real()
    assert np.allclose(z.eta, np.conj(z.xi))
    assert np.allclose(z.actions(), np.abs(z.xi) ** 2)
    assert z[Index((1,), -1)] == np.conj(z[Index((1,), 1)])


def test_tail_beyond_truncation_is_zero(rng):
    lat = Lattice(2, 3)
    z = State.from_xi(lat, rng.normal(size=lat.size) + 1j * rng.normal(size=lat.size))
    assert tail_norm(z, 0.4, lat.K * math.sqrt(2)) == 0.0


def test_tail_at_zero_without_zero_mode(rng):
    lat = Lattice(1, 5)
    xi = rng.normal(size=lat.size) + 0j
    xi[lat.position((0,))] = 0
    z = State.from_xi(lat, xi)
    assert tail_norm(z, 0.3, 0) == pytest.approx(norm_rho(z, 0.3), rel=1e-15)


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 2.0), st.floats(0.05, 1.5), st.integers(0, 8))
def test_tail_shift_inequality(seed, rho, mu, N):
    rng = np.random.default_rng(seed)
    lat = Lattice(1, 8)
    z = State.from_xi(lat, (rng.normal(size=lat.size) + 1j * rng.normal(size=lat.size)) * np.exp(-(rho + mu) * lat.moduli))
    assert tail_norm(z, rho, N) <= math.exp(-mu * N) * norm_rho(z, rho + mu) * (1 + 1e-12)


def test_from_function_constants():
    lat = Lattice(1, 4)
    M = 16
    x = lat.grid(M)[..., 0]
    z = from_function(np.ones(M), lat)
    assert np.allclose(z.xi, np.eye(lat.size)[lat.position((0,))], atol=1e-15)
    z = from_function(np.exp(1j * x), lat)
    assert np.allclose(z.xi, np.eye(lat.size)[lat.position((1,))], atol=1e-15)


def test_from_function_rejects_aliasing_grid():
    lat = Lattice(1, 4)
    with pytest.raises(ValueError):
        from_function(np.ones(8), lat)


def test_grid_roundtrip(rng):
    lat = Lattice(2, 3)
    z = State.from_xi(lat, rng.normal(size=lat.size) + 1j * rng.normal(size=lat.size))
    back = from_function(to_grid(z, 9), lat)
    assert np.max(np.abs(back.z - z.z)) < 1e-14


def test_geometric_series_and_analytic_constant():
    lat = Lattice(1, 8)
    M = 64
    x = lat.grid(M)[..., 0]
    u = sum(2.0 ** -abs(k) * np.exp(1j * k * x) for k in range(-8, 9))
    z = from_function(u, lat)
    assert np.allclose(z.xi, 2.0 ** -np.abs(lat.sites[:, 0]), atol=1e-15)
    rho = 0.5
    for mu in (0.0, 0.2, 0.4):
        c = analytic_constant(rho, mu, 1)
        assert norm_rho(z, mu) <= c * strip_sup(z, rho)
        assert strip_sup(z, mu) <= c * norm_rho(z, rho)


def test_analytic_constant_formula():
    assert analytic_constant(1.0, 0.0, 1) == pytest.approx(2 / (1 - math.exp(-1)))
    assert analytic_constant(1.0, 0.5, 2) == pytest.approx((2 / (1 - math.exp(-0.5 / math.sqrt(2)))) ** 2)
    with pytest.raises(ValueError):
        analytic_constant(0.5, 0.5, 1)


def test_to_function_values():
    lat = Lattice(1, 3)
    pts = np.linspace(0, 2 * np.pi, 7)
    assert np.all(to_function(State.zeros(lat), pts) == 0)
    c = 0.3 - 0.2j
    z = State.from_coeffs(lat, {make_index(0, 1): c})
    assert np.allclose(to_function(z, pts + 0.4j), c)
    z = State.from_coeffs(lat, {make_index(1, 1): 1.0})
    assert np.allclose(np.abs(to_function(z, pts + 0.5j)), math.exp(-0.5))
    assert strip_sup(z, 0.5) == pytest.approx(math.exp(0.5), rel=1e-14)


def test_strip_sup_higher_dim_bounds(rng):
    lat = Lattice(2, 2)
    z = geometric_state(lat, 1.0, 0.1, rng.uniform(0, 2 * np.pi, lat.size))
    s = strip_sup(z, 0.3)
    assert np.max(np.abs(to_grid(z, 5))) <= s <= norm_rho(z, 0.3)


def test_state_io(tmp_path, rng):
    lat = Lattice(2, 2)
    z = State.from_xi(lat, rng.normal(size=lat.size) + 1j * rng.normal(size=lat.size))
    for name in ("z.json", "z.csv"):
        save_state(tmp_path / name, z)
        back = load_state(tmp_path / name, lat)
        assert np.array_equal(back.z, z.z)
    u = to_grid(z, 7)
    write_grid(tmp_path / "u.bin", u, lat)
    v, lat2 = read_grid(tmp_path / "u.bin")
    assert lat2 == lat and np.array_equal(u, v)


def test_state_arithmetic():
    lat = Lattice(1, 1)
    a = State.from_xi(lat, [1, 2, 3])
    b = State.from_xi(lat, [1, 1, 1])
    assert np.array_equal((a - b).xi, [0, 1, 2])
    assert np.array_equal((a + b * 2).xi, [3, 4, 5])
    with pytest.raises(ValueError):
        a + State.zeros(Lattice(1, 2))
