"""Time integration of the truncated NLS and of polynomial Hamiltonian flows.

The NLS integrator is a pseudo-spectral Strang splitting on the grid with
``M = 2K + 1`` points per dimension, so that grid modes and lattice sites
coincide. Both substeps are exact flows of Hamiltonians on the lattice: the
linear rotation ``xi_a -> exp(-i omega_a h) xi_a`` and, for ``g = G(|u|^2)``,
the pointwise rotation ``u -> u exp(-i h G'(|u|^2))``. The conserved energy
of the scheme's continuous limit is therefore the collocation energy
``sum omega_a I_a + mean_x g(u(x))``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import Lattice, State, strip_sup
from .nonlinearity import SeriesSpec
from .polynomial import Frequencies, Polynomial, is_resonant, mu, random_polynomial, random_real_state


class BlowUpError(RuntimeError):
    pass


@dataclass
class Trajectory:
    """Recorded samples of a real trajectory.

    ``xi`` holds the recorded xi-coefficients (rows are times) unless the run
    was lean, in which case only ``lean_observables`` is kept.
    """

    lattice: Lattice
    times: np.ndarray
    xi: np.ndarray | None
    energy: np.ndarray
    config: dict = field(default_factory=dict)
    lean_observables: dict | None = None

    def state(self, i: int) -> State:
        return State.from_xi(self.lattice, self.xi[i])

    def __len__(self) -> int:
        return len(self.times)


class StrangIntegrator:
    """Fixed-step Strang splitting for ``H0 + P_coll`` on the lattice grid."""

    def __init__(self, freqs: Frequencies, spec: SeriesSpec, h: float):
        lat = freqs.lattice
        self.lattice = lat
        self.freqs = freqs
        self.spec = spec
        self.h = h
        self.M = 2 * lat.K + 1
        self.shape = (self.M,) * lat.d
        self._fft_pos = tuple((lat.sites % self.M).T)
        self._axes = tuple(range(-lat.d, 0))
        omega = np.zeros(self.shape)
        omega[self._fft_pos] = freqs.omega
        self.omega_grid = omega
        self.half = np.exp(-0.5j * h * omega)
        self.full = self.half * self.half
        self.gauge = spec.gauge_invariant

    # layout conversions; forward-normalised FFTs match xi_a = M^-d sum u(x) e^{-ia.x}
    # a leading batch axis is allowed: xi of shape (B, n) maps to (B, M, .., M)
    def to_grid_coeffs(self, xi: np.ndarray) -> np.ndarray:
        xi = np.asarray(xi)
        c = np.zeros(xi.shape[:-1] + self.shape, dtype=complex)
        c[(Ellipsis,) + self._fft_pos] = xi
        return c

    def from_grid_coeffs(self, c: np.ndarray) -> np.ndarray:
        return c[(Ellipsis,) + self._fft_pos]

    def physical(self, c: np.ndarray) -> np.ndarray:
        return np.fft.ifftn(c, axes=self._axes, norm="forward")

    def spectral(self, u: np.ndarray) -> np.ndarray:
        return np.fft.fftn(u, axes=self._axes, norm="forward")

    def nonlinear(self, c: np.ndarray, h: float) -> np.ndarray:
        """Advance the nonlinear part by ``h``."""
        if not self.spec.terms:
            return c
        if self.gauge:
            u = self.physical(c)
            u *= np.exp(-1j * h * self.spec.gauge_derivative(u.real ** 2 + u.imag ** 2))
            return self.spectral(u)

        def f(cc):
            u = self.physical(cc)
            return -1j * self.spectral(self.spec.dg_dv2(u, u.conj()))

        k1 = f(c)
        k2 = f(c + 0.5 * h * k1)
        k3 = f(c + 0.5 * h * k2)
        k4 = f(c + h * k3)
        return c + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    def energy(self, c: np.ndarray):
        """Collocation energy; an array over the batch axis when there is one."""
        lin = np.sum(self.omega_grid * np.abs(c) ** 2, axis=self._axes)
        if self.spec.terms:
            u = self.physical(c)
            lin = lin + np.mean(self.spec.g(u, u.conj()), axis=self._axes).real
        return lin if np.ndim(lin) else float(lin)

    def step(self, c: np.ndarray) -> np.ndarray:
        c = c * self.half
        c = self.nonlinear(c, self.h)
        return c * self.half

    def advance(self, c: np.ndarray, nsteps: int) -> np.ndarray:
        """``nsteps`` Strang steps with the interior half rotations merged."""
        if nsteps <= 0:
            return c
        c = c * self.half
        for i in range(nsteps):
            c = self.nonlinear(c, self.h)
            c *= self.full if i < nsteps - 1 else self.half
        return c


def step_strang(z: State, h: float, freqs: Frequencies, spec: SeriesSpec) -> State:
    """One Strang step: half linear rotation, nonlinear step, half linear rotation."""
    integ = StrangIntegrator(freqs, spec, h)
    c = integ.step(integ.to_grid_coeffs(z.xi))
    if not np.all(np.isfinite(c)):
        raise BlowUpError("non-finite coefficients after step")
    return State.from_xi(z.lattice, integ.from_grid_coeffs(c))


def _weights(lattice: Lattice, rho: float) -> np.ndarray:
    return np.exp(rho * lattice.moduli)


def observable_row(lattice: Lattice, xi: np.ndarray, xi0: np.ndarray, rho: float, N: float) -> dict:
    w = _weights(lattice, rho)
    mod = np.abs(xi)
    tail_mask = lattice.moduli > N
    return {
        "sum_I": math.fsum(mod ** 2),
        "norm_rho": 2.0 * math.fsum(w * mod),
        "tail": 2.0 * math.fsum((w * mod)[tail_mask]),
        "drift": math.fsum(w * np.abs(mod - np.abs(xi0))),
    }


def simulate_batch(
    z0_list,
    T: float,
    h: float,
    cadence: int,
    freqs: Frequencies,
    spec: SeriesSpec,
    *,
    lean: bool = False,
    rho: float = 0.0,
    N: float = 0.0,
    blowup_factor: float = 10.0,
) -> list[Trajectory]:
    """Run several initial data through one batched integrator (same ``T``, ``h``)."""
    for z0 in z0_list:
        if not z0.is_real(1e-14 * max(1.0, float(np.max(np.abs(z0.z))))):
            raise ValueError("initial state must be real")
    if cadence < 1:
        raise ValueError("cadence must be >= 1")
    nsteps = int(round(abs(T / h)))
    if not math.isclose(nsteps * abs(h), abs(T), rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError("T must be an integer multiple of h")
    integ = StrangIntegrator(freqs, spec, h)
    lat = freqs.lattice
    B = len(z0_list)
    xi0 = np.array([z.xi for z in z0_list])
    c = integ.to_grid_coeffs(xi0)
    w = _weights(lat, rho)
    limit = blowup_factor * np.maximum(np.abs(xi0) @ w, np.finfo(float).tiny)
    times, snaps, energies = [0.0], [xi0.copy()], [np.atleast_1d(integ.energy(c))]
    rows = [[observable_row(lat, xi0[b], xi0[b], rho, N)] for b in range(B)] if lean else None
    done = 0
    while done < nsteps:
        n = min(cadence, nsteps - done)
        c = integ.advance(c, n)
        done += n
        xi = integ.from_grid_coeffs(c)
        s = np.abs(xi) @ w
        if not np.all(np.isfinite(s)) or np.any(s > limit):
            raise BlowUpError(f"weighted norm exceeded {blowup_factor}x its initial value at t={done * h:g}")
        times.append(done * h)
        energies.append(np.atleast_1d(integ.energy(c)))
        if lean:
            for b in range(B):
                rows[b].append(observable_row(lat, xi[b], xi0[b], rho, N))
        else:
            snaps.append(xi.copy())
    config = {"h": h, "scheme": "strang", "T": T, "cadence": cadence, "lattice": lat.to_json()}
    times = np.array(times)
    energies = np.array(energies)
    out = []
    for b in range(B):
        lean_obs = {k: np.array([r[k] for r in rows[b]]) for k in rows[b][0]} if lean else None
        xs = None if lean else np.array([sn[b] for sn in snaps])
        out.append(Trajectory(lat, times, xs, energies[:, b].copy(), dict(config), lean_obs))
    return out


def simulate(z0: State, T: float, h: float, cadence: int, freqs: Frequencies, spec: SeriesSpec, **kw) -> Trajectory:
    """Integrate with Strang splitting to time ``T`` (``h`` may be negative), recording every ``cadence`` steps.

    Keywords: ``lean`` (keep observables only, needs ``rho`` and ``N``) and
    ``blowup_factor`` (abort once the weighted norm grows past this factor).
    """
    return simulate_batch([z0], T, h, cadence, freqs, spec, **kw)[0]


def flow_poly_hamiltonian(
    H_terms,
    z0: State,
    T: float,
    h: float,
    freqs: Frequencies | None = None,
    *,
    cadence: int = 1,
    blowup_factor: float = 10.0,
) -> Trajectory:
    """RK4 trajectory of ``z' = X_{H0 + sum H_terms}(z)``; ``H0`` is included when ``freqs`` is given."""
    lat = z0.lattice
    terms = [p for p in H_terms if p]
    n = lat.size
    sign_omega = None
    if freqs is not None:
        sign_omega = np.concatenate([-1j * freqs.omega, 1j * freqs.omega])

    def field_fn(z):
        out = sign_omega * z if sign_omega is not None else np.zeros_like(z)
        for p in terms:
            out = out + p.vector_field_array(lat, z)
        return out

    def energy(z):
        e = 0j
        if freqs is not None:
            e += np.sum(freqs.omega * z[:n] * z[n:])
        for p in terms:
            e += complex(p.evaluate_array(lat, z))
        return e.real

    nsteps = int(round(T / h))
    z = z0.z.copy()
    limit = blowup_factor * max(np.sum(np.abs(z)), np.finfo(float).tiny)
    times, snaps, energies = [0.0], [z[:n].copy()], [energy(z)]
    for i in range(1, nsteps + 1):
        k1 = field_fn(z)
        k2 = field_fn(z + 0.5 * h * k1)
        k3 = field_fn(z + 0.5 * h * k2)
        k4 = field_fn(z + h * k3)
        z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if i % cadence == 0 or i == nsteps:
            s = np.sum(np.abs(z))
            if not np.isfinite(s) or s > limit:
                raise BlowUpError(f"norm exceeded {blowup_factor}x its initial value at t={i * h:g}")
            times.append(i * h)
            snaps.append(z[:n].copy())
            energies.append(energy(z))
    config = {"h": h, "scheme": "rk4", "T": T, "cadence": cadence, "lattice": lat.to_json()}
    return Trajectory(lat, np.array(times), np.array(snaps), np.array(energies), config)


@dataclass
class Observables:
    times: np.ndarray
    actions: np.ndarray | None
    sum_I: np.ndarray
    norm_rho: np.ndarray
    tail: np.ndarray
    drift: np.ndarray
    energy: np.ndarray
    strip: np.ndarray | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["t", "H", "sum_I", "norm_rho", "tail", "drift"]
        if self.strip is not None:
            cols.append("strip_sup")
        w.writerow(cols)
        for i, t in enumerate(self.times):
            row = [t, self.energy[i], self.sum_I[i], self.norm_rho[i], self.tail[i], self.drift[i]]
            if self.strip is not None:
                row.append(self.strip[i])
            w.writerow([repr(float(x)) for x in row])
        return buf.getvalue()


def observables(traj: Trajectory, rho: float, N: float, *, strip_width: float | None = None) -> Observables:
    """Actions, weighted norm, tail, action drift and energy along a trajectory.

    ``strip_width`` adds ``sup |u|`` on the strip of that half-width (a proxy
    for the analytic norm of the solution).
    """
    if traj.lean_observables is not None:
        o = traj.lean_observables
        return Observables(traj.times, None, o["sum_I"], o["norm_rho"], o["tail"], o["drift"], traj.energy)
    lat = traj.lattice
    xi0 = traj.xi[0]
    rows = [observable_row(lat, xi, xi0, rho, N) for xi in traj.xi]
    strip = None
    if strip_width is not None:
        strip = np.array([strip_sup(State.from_xi(lat, xi), strip_width) for xi in traj.xi])
    return Observables(
        traj.times,
        np.abs(traj.xi) ** 2,
        np.array([r["sum_I"] for r in rows]),
        np.array([r["norm_rho"] for r in rows]),
        np.array([r["tail"] for r in rows]),
        np.array([r["drift"] for r in rows]),
        traj.energy,
        strip,
    )


def initial_datum(lattice: Lattice, eps: float, rho: float, seed: int = 0, decay: float | None = None) -> State:
    """Random-phase datum with ``|xi_a| ~ exp(-decay |a|)`` scaled so that ``sup |u|`` on the ``2 rho`` strip is ``eps``."""
    if decay is None:
        decay = 3.0 * rho
    rng = np.random.default_rng(seed)
    xi = np.exp(-decay * lattice.moduli) * np.exp(2j * np.pi * rng.random(lattice.size))
    z = State.from_xi(lattice, xi)
    return z * (eps / strip_sup(z, 2 * rho))


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def energy_order_study(z0: State, T: float, h: float, freqs: Frequencies, spec: SeriesSpec) -> dict:
    """Max energy error at steps ``h`` and ``h/2`` and their ratio."""
    errs = []
    for hh in (h, h / 2):
        tr = simulate(z0, T, hh, 1, freqs, spec)
        errs.append(float(np.max(np.abs(tr.energy - tr.energy[0]))))
    return {"h": h, "errors": errs, "ratio": errs[0] / errs[1] if errs[1] > 0 else math.inf}


def drift_runs(
    freqs: Frequencies,
    spec: SeriesSpec,
    eps_list,
    rho: float,
    T: float,
    h: float,
    *,
    cadence: int = 100,
    seed: int = 0,
    N: float = 0.0,
) -> list[Trajectory]:
    """Lean trajectories from ``initial_datum(eps)`` for each ``eps``, integrated as one batch."""
    z0s = [initial_datum(freqs.lattice, float(eps), rho, seed) for eps in eps_list]
    return simulate_batch(z0s, T, h, cadence, freqs, spec, lean=True, rho=rho, N=N)


def drift_summary(eps: float, traj: Trajectory) -> dict:
    o = traj.lean_observables
    return {
        "eps": float(eps),
        "max_drift": float(np.max(o["drift"])),
        "bound": float(eps) ** 1.5,
        "max_norm_ratio": float(np.max(o["norm_rho"]) / o["norm_rho"][0]),
        "mass_error": float(np.max(np.abs(o["sum_I"] - o["sum_I"][0])) / o["sum_I"][0]),
        "energy_error": float(np.max(np.abs(traj.energy - traj.energy[0]))),
    }


def drift_sweep(freqs: Frequencies, spec: SeriesSpec, eps_list, rho: float, T: float, h: float, **kw) -> list[dict]:
    """Max action drift over ``[0, T]`` for each initial size ``eps``."""
    trajs = drift_runs(freqs, spec, eps_list, rho, T, h, **kw)
    return [drift_summary(e, tr) for e, tr in zip(eps_list, trajs)]


def _cumtrapz(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y, dtype=float)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


def pcrux_check(Z: Polynomial, traj: Trajectory, rho: float, N: float, *, slack: float = 0.05, atol: float = 1e-12) -> dict:
    """Integral bounds on the tail and on the weighted norm along a flow of ``H0 + Z``.

    ``Z`` is homogeneous of degree ``k`` in N-normal form. Both
    ``R(t) - R(0)`` and ``|z(t)| - |z(0)|`` must stay below
    ``(1 + slack) 4 k^3 ||Z|| int_0^t R(s)^2 |z(s)|^(k-3) ds`` (trapezoid rule).
    """
    if not Z.is_homogeneous():
        raise ValueError("Z must be homogeneous")
    k = Z.degree
    obs = observables(traj, rho, N)
    R, nz = obs.tail, obs.norm_rho
    integral = 4 * k ** 3 * Z.norm() * _cumtrapz(R ** 2 * nz ** (k - 3), traj.times)
    rhs = (1 + slack) * integral
    tol = atol * max(1.0, nz[0])
    margin_tail = rhs - (R - R[0])
    margin_norm = rhs - (nz - nz[0])
    return {
        "k": k,
        "Z_norm": Z.norm(),
        "tail_max_increase": float(np.max(R - R[0])),
        "norm_max_increase": float(np.max(nz - nz[0])),
        "integral_final": float(integral[-1]),
        # t = 0 is an equality, so margins are taken over later samples
        "min_margin_tail": float(np.min(margin_tail[1:])) if len(margin_tail) > 1 else 0.0,
        "min_margin_norm": float(np.min(margin_norm[1:])) if len(margin_norm) > 1 else 0.0,
        "tail_ok": bool(np.all(margin_tail >= -tol)),
        "norm_ok": bool(np.all(margin_norm >= -tol)),
    }


def pcrux_experiment(
    freqs: Frequencies,
    n_traj: int,
    N: float,
    rho: float,
    T: float,
    h: float,
    *,
    seed: int = 0,
    n_terms: int = 30,
    decay: float = 1.0,
    scale: float = 0.3,
    slack: float = 0.05,
) -> list[dict]:
    """Tail bounds along flows of ``H0 + Z`` with random homogeneous N-normal forms of degree 3 or 4."""
    lat = freqs.lattice
    rows = []
    for i, ss in enumerate(np.random.SeedSequence(seed).spawn(n_traj)):
        rng = np.random.default_rng(ss)
        k = 3 + i % 2
        Z = random_polynomial(lat, k, n_terms, rng, select=lambda j: is_resonant(j) or mu(j) > N)
        z0 = random_real_state(lat, rng, decay=decay, scale=scale)
        tr = flow_poly_hamiltonian([Z], z0, T, h, freqs, cadence=10)
        row = pcrux_check(Z, tr, rho, N, slack=slack)
        row["trajectory"] = i
        rows.append(row)
    return rows
