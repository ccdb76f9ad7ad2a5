"""Truncated Fourier lattice, weighted l1 phase space and grid conversions.

A point of the phase space is a sequence ``z_j`` indexed by ``j = (a, delta)``
with ``a`` a lattice site in Z^d and ``delta = +1`` for the Fourier
coefficients ``xi_a`` of ``u`` and ``delta = -1`` for the coefficients
``eta_a`` of ``conj(u)``.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple

import numpy as np


class Index(NamedTuple):
    """A point ``(a, delta)`` of Z^d x {+1, -1}."""

    a: tuple[int, ...]
    delta: int

    @property
    def modulus(self) -> float:
        return math.sqrt(sum(x * x for x in self.a))

    def conjugate(self) -> "Index":
        return Index(self.a, -self.delta)


def make_index(a, delta: int) -> Index:
    if delta not in (1, -1):
        raise ValueError(f"delta must be +1 or -1, got {delta!r}")
    if isinstance(a, (int, np.integer)):
        a = (int(a),)
    return Index(tuple(int(x) for x in a), int(delta))


@dataclass(frozen=True)
class Lattice:
    """Sites ``a`` of Z^d with ``max_i |a_i| <= K``, in lexicographic order."""

    d: int
    K: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension d must be >= 1")
        if self.K < 0:
            raise ValueError("truncation radius K must be >= 0")

    @cached_property
    def sites(self) -> np.ndarray:
        rng = range(-self.K, self.K + 1)
        return np.array(list(itertools.product(rng, repeat=self.d)), dtype=np.int64).reshape(-1, self.d)

    @cached_property
    def _positions(self) -> dict[tuple[int, ...], int]:
        return {tuple(int(x) for x in s): i for i, s in enumerate(self.sites)}

    @property
    def size(self) -> int:
        return len(self.sites)

    @cached_property
    def moduli(self) -> np.ndarray:
        """Euclidean |a| of every site (weights stay Euclidean on the box)."""
        return np.sqrt(np.sum(self.sites.astype(float) ** 2, axis=1))

    @cached_property
    def slot_moduli(self) -> np.ndarray:
        return np.concatenate([self.moduli, self.moduli])

    def __contains__(self, a) -> bool:
        return tuple(a) in self._positions

    def position(self, a) -> int:
        try:
            return self._positions[tuple(a)]
        except KeyError:
            raise KeyError(f"site {tuple(a)} is not on lattice d={self.d}, K={self.K}") from None

    def slot(self, j: Index) -> int:
        """Position of ``z_j`` in the packed vector ``(xi, eta)``."""
        p = self.position(j.a)
        return p if j.delta == 1 else p + self.size

    def index_of_slot(self, s: int) -> Index:
        n = self.size
        a = tuple(int(x) for x in self.sites[s % n])
        return Index(a, 1 if s < n else -1)

    @property
    def max_modulus(self) -> float:
        return self.K * math.sqrt(self.d)

    def grid(self, M: int) -> np.ndarray:
        """Uniform torus grid with ``M`` points per dimension, shape ``(M,)*d + (d,)``."""
        x = 2 * np.pi * np.arange(M) / M
        mesh = np.meshgrid(*([x] * self.d), indexing="ij")
        return np.stack(mesh, axis=-1)

    def to_json(self) -> dict:
        return {"d": self.d, "K": self.K}


@dataclass(frozen=True, eq=False)
class State:
    """Coefficient sequence on a lattice, packed as ``z = (xi, eta)``.

    Entries outside the stored lattice are zero; the packed array is the
    dense form of the sparse map ``Index -> complex``.
    """

    lattice: Lattice
    z: np.ndarray = field(repr=False)

    def __post_init__(self):
        z = np.array(self.z, dtype=complex).reshape(-1)
        if z.shape[0] != 2 * self.lattice.size:
            raise ValueError(f"expected {2 * self.lattice.size} entries, got {z.shape[0]}")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    @classmethod
    def zeros(cls, lattice: Lattice) -> "State":
        return cls(lattice, np.zeros(2 * lattice.size, dtype=complex))

    @classmethod
    def from_xi(cls, lattice: Lattice, xi) -> "State":
        """Real state ``(xi, conj(xi))``."""
        xi = np.asarray(xi, dtype=complex).reshape(-1)
        return cls(lattice, np.concatenate([xi, np.conj(xi)]))

    @classmethod
    def from_coeffs(cls, lattice: Lattice, coeffs: Mapping[Index, complex]) -> "State":
        z = np.zeros(2 * lattice.size, dtype=complex)
        for j, c in coeffs.items():
            z[lattice.slot(j)] = c
        return cls(lattice, z)

    @property
    def xi(self) -> np.ndarray:
        return self.z[: self.lattice.size]

    @property
    def eta(self) -> np.ndarray:
        return self.z[self.lattice.size:]

    @property
    def coeffs(self) -> dict[Index, complex]:
        """Nonzero entries, in deterministic slot order."""
        return {self.lattice.index_of_slot(s): complex(self.z[s]) for s in np.flatnonzero(self.z)}

    def __getitem__(self, j: Index) -> complex:
        if j.a not in self.lattice:
            return 0j
        return complex(self.z[self.lattice.slot(j)])

    def is_real(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.eta - np.conj(self.xi)) <= tol))

    def actions(self) -> np.ndarray:
        return (self.xi * self.eta).real

    def __add__(self, other: "State") -> "State":
        _same_lattice(self, other)
        return State(self.lattice, self.z + other.z)

    def __sub__(self, other: "State") -> "State":
        _same_lattice(self, other)
        return State(self.lattice, self.z - other.z)

    def __mul__(self, c) -> "State":
        return State(self.lattice, self.z * c)

    __rmul__ = __mul__

    def to_json(self) -> dict:
        entries = []
        for j, c in self.coeffs.items():
            entries.append({"a": list(j.a), "delta": j.delta, "re": c.real, "im": c.imag})
        return {"lattice": self.lattice.to_json(), "entries": entries}

    @classmethod
    def from_json(cls, data: dict) -> "State":
        lat = Lattice(**data["lattice"])
        coeffs = {make_index(e["a"], e["delta"]): complex(e["re"], e["im"]) for e in data["entries"]}
        return cls.from_coeffs(lat, coeffs)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"a{i + 1}" for i in range(self.lattice.d)] + ["delta", "re", "im"])
        for j, c in self.coeffs.items():
            w.writerow([*j.a, j.delta, repr(c.real), repr(c.imag)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, lattice: Lattice) -> "State":
        rows = list(csv.reader(io.StringIO(text)))
        d = lattice.d
        coeffs = {}
        for row in rows[1:]:
            if not row:
                continue
            a = tuple(int(x) for x in row[:d])
            coeffs[make_index(a, int(row[d]))] = complex(float(row[d + 1]), float(row[d + 2]))
        return cls.from_coeffs(lattice, coeffs)


def _same_lattice(u: State, v: State) -> None:
    if u.lattice != v.lattice:
        raise ValueError("states live on different lattices")


def _check_rho(rho: float) -> None:
    if not rho >= 0:
        raise ValueError(f"rho must be nonnegative, got {rho}")


def _weighted_abs(z: State, rho: float) -> np.ndarray:
    if not np.all(np.isfinite(z.z)):
        raise ValueError("state has non-finite coefficients")
    return np.exp(rho * z.lattice.slot_moduli) * np.abs(z.z)


def norm_rho(z: State, rho: float) -> float:
    """Weighted l1 norm ``sum_j exp(rho |j|) |z_j|`` (compensated summation)."""
    _check_rho(rho)
    return math.fsum(_weighted_abs(z, rho))


def tail_norm(z: State, rho: float, N: float) -> float:
    """The tail functional: the weighted norm restricted to ``|j| > N``."""
    _check_rho(rho)
    w = _weighted_abs(z, rho)
    return math.fsum(w[z.lattice.slot_moduli > N])


def analytic_constant(rho: float, mu: float, d: int) -> float:
    """``(2 / (1 - exp((mu - rho)/sqrt(d))))**d`` relating strip and weighted norms."""
    if not mu < rho:
        raise ValueError("need mu < rho")
    return (2.0 / (1.0 - math.exp((mu - rho) / math.sqrt(d)))) ** d


def from_function(samples, lattice: Lattice) -> State:
    """Fourier coefficients of grid samples of ``u``, returned as a real state.

    ``samples`` has shape ``(M,)*d``; the convention is
    ``xi_a = M^-d sum_x u(x) exp(-i a.x)``.
    """
    u = np.asarray(samples, dtype=complex)
    if u.ndim != lattice.d:
        raise ValueError(f"expected a {lattice.d}-dimensional grid, got shape {u.shape}")
    M = u.shape[0]
    if any(s != M for s in u.shape):
        raise ValueError("grid must have the same number of points per dimension")
    if M < 2 * lattice.K + 1:
        raise ValueError(f"grid of {M} points aliases modes up to K={lattice.K}; need >= {2 * lattice.K + 1}")
    coef = np.fft.fftn(u) / M ** lattice.d
    idx = tuple((lattice.sites % M).T)
    return State.from_xi(lattice, coef[idx])


def to_grid(z: State, M: int) -> np.ndarray:
    """Synthesize ``u(x) = sum_a xi_a exp(i a.x)`` on the uniform grid."""
    lat = z.lattice
    if M < 2 * lat.K + 1:
        raise ValueError(f"grid of {M} points aliases modes up to K={lat.K}")
    spec = np.zeros((M,) * lat.d, dtype=complex)
    spec[tuple((lat.sites % M).T)] = z.xi
    return np.fft.ifftn(spec) * M ** lat.d


def to_function(z: State, points) -> np.ndarray:
    """Evaluate ``sum_a xi_a exp(i a.(x + iy))`` at complex points of shape ``(n, d)``."""
    pts = np.asarray(points, dtype=complex)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1) if z.lattice.d == 1 else pts.reshape(1, -1)
    phase = pts @ z.lattice.sites.T.astype(complex)
    return np.exp(1j * phase) @ z.xi


def strip_sup(z: State, width: float, n_points: int = 512) -> float:
    """Estimate ``sup |u|`` over the strip ``|Im x| <= width``.

    The modulus is subharmonic, so the sup sits on ``|y| = width``. In d=1 the
    boundary is sampled exactly on a uniform x grid; for d > 1 the imaginary
    part runs over the axis and diagonal directions only.
    """
    lat = z.lattice
    d = lat.d
    if d == 1:
        x = 2 * np.pi * np.arange(n_points) / n_points
        vals = [to_function(z, (x + 1j * s * width).reshape(-1, 1)) for s in (1.0, -1.0)]
        return float(max(np.max(np.abs(v)) for v in vals))
    m = max(2 * lat.K + 1, int(round(n_points ** (1.0 / d))))
    xs = lat.grid(m).reshape(-1, d)
    dirs = [np.eye(d)[i] * s for i in range(d) for s in (1, -1)]
    dirs += [np.array(sgn) / math.sqrt(d) for sgn in itertools.product((1, -1), repeat=d)]
    best = 0.0
    for y in dirs:
        best = max(best, float(np.max(np.abs(to_function(z, xs + 1j * width * y)))))
    return best


def write_grid(path, samples, lattice: Lattice) -> None:
    """Binary grid file: JSON header line then row-major complex128 data."""
    u = np.ascontiguousarray(np.asarray(samples, dtype=np.complex128))
    header = {"d": lattice.d, "K": lattice.K, "M": int(u.shape[0]), "dtype": "complex128"}
    with open(path, "wb") as f:
        f.write((json.dumps(header) + "\n").encode())
        f.write(u.tobytes(order="C"))


def read_grid(path) -> tuple[np.ndarray, Lattice]:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode())
        data = f.read()
    dtype = np.dtype(header.get("dtype", "complex128"))
    M, d = header["M"], header["d"]
    u = np.frombuffer(data, dtype=dtype).reshape((M,) * d)
    return u.astype(np.complex128), Lattice(d, header["K"])


def save_state(path, z: State) -> None:
    path = Path(path)
    if path.suffix == ".csv":
        path.write_text(z.to_csv(), encoding="utf-8")
    else:
        path.write_text(json.dumps(z.to_json(), indent=1), encoding="utf-8")


def load_state(path, lattice: Lattice | None = None) -> State:
    path = Path(path)
    if path.suffix == ".csv":
        if lattice is None:
            raise ValueError("CSV states need an explicit lattice")
        return State.from_csv(path.read_text(encoding="utf-8"), lattice)
    return State.from_json(json.loads(path.read_text(encoding="utf-8")))


def geometric_state(lattice: Lattice, decay: float, amplitude: float = 1.0, phases: Iterable[float] | None = None) -> State:
    """Real state with ``|xi_a| = amplitude * exp(-decay |a|)``."""
    xi = amplitude * np.exp(-decay * lattice.moduli).astype(complex)
    if phases is not None:
        xi = xi * np.exp(1j * np.asarray(list(phases), dtype=float))
    return State.from_xi(lattice, xi)
