"""Birkhoff normal form: homological equation, recursive construction, Lie transform.

Bracket convention. ``poisson(F, G)`` is the bracket of the polynomial
module, under which ``d/dt F(z(t)) = poisson(F, H)`` along the flow of ``H``.
The time-1 map of ``chi`` therefore acts on functions through the Lie
derivative ``ad(chi, K) = poisson(K, chi)``, and the homological operator is
``poisson(H0, chi)``, which multiplies the coefficient of ``z_j`` by
``i Omega(j)``. With these two operators the degree-``m`` equations read

    poisson(H0, chi_m) - Z_m = Q_m,
    Q_m = -P_m - sum_k ad(chi_k, P_{m+2-k})
          + sum_k B_k/k! sum_l ad(chi_l1) ... ad(chi_lk) (Z_l(k+1) - P_l(k+1)).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np

from .lattice import Lattice, State, norm_rho
from .polynomial import (
    DEFAULT_MAX_DEGREE,
    Frequencies,
    Polynomial,
    divisor,
    h0_value,
    is_resonant,
    mu,
    nform_split,
    _bracket,
    poisson,
    quadratic_hamiltonian,
    random_real_state,
)


class SmallDivisorError(ArithmeticError):
    """A monomial that must be removed has a vanishing divisor."""


@lru_cache(maxsize=None)
def _bernoulli_table(n: int) -> tuple[Fraction, ...]:
    B = [Fraction(1)]
    for k in range(1, n + 1):
        # sum_{i=0}^{k} C(k+1, i) B_i = 0
        s = sum(Fraction(math.comb(k + 1, i)) * B[i] for i in range(k))
        B.append(-s / (k + 1))
    return tuple(B)


def bernoulli(k: int) -> Fraction:
    """Bernoulli number for the generating function ``z / (e^z - 1)`` (so ``B_1 = -1/2``)."""
    if k < 0:
        raise ValueError("k must be >= 0")
    return _bernoulli_table(k)[k]


def ad(chi: Polynomial, K: Polynomial) -> Polynomial:
    """Lie derivative of ``K`` along the Hamiltonian flow of ``chi``."""
    return poisson(K, chi)


def homological_operator(chi: Polynomial, freqs: Frequencies) -> Polynomial:
    """``poisson(H0, chi)`` computed by the generic bracket."""
    return poisson(quadratic_hamiltonian(freqs), chi)


def solve_homological(
    Q: Polynomial,
    freqs: Frequencies,
    N: float,
    gamma: float | None = None,
    nu: float | None = None,
    c0: float | None = None,
) -> tuple[Polynomial, Polynomial]:
    """Solve ``poisson(H0, chi) - Z = Q`` with ``Z`` in ``N``-normal form.

    Resonant monomials and those with ``mu(j) > N`` go to ``Z`` (``Z_j = -Q_j``);
    the rest are removed by ``chi_j = Q_j / (i Omega(j))``. When the
    non-resonance constants are given, every divisor used is checked against
    ``gamma c0^k / N^(nu k)``.
    """
    chi_terms: dict = {}
    z_terms: dict = {}
    for j, c in Q.items():
        if is_resonant(j) or mu(j) > N:
            z_terms[j] = -c
            continue
        om = divisor(j, freqs)
        if om == 0:
            raise SmallDivisorError(f"vanishing divisor on non-resonant monomial {j}")
        if gamma is not None:
            k = len(j)
            floor = gamma * c0 ** k / max(N, 1) ** (nu * k)
            if abs(om) < floor:
                raise SmallDivisorError(f"|Omega| = {abs(om):.3e} below {floor:.3e} for {j}")
        chi_terms[j] = c / (1j * om)
    return (
        Polynomial._from_buckets(_bucket(chi_terms), Q.max_degree),
        Polynomial._from_buckets(_bucket(z_terms), Q.max_degree),
    )


def _bucket(terms: dict) -> dict:
    out: dict = {}
    for j, c in terms.items():
        out.setdefault(len(j), {})[j] = c
    return out


def homological_residual(chi: Polynomial, Z: Polynomial, Q: Polynomial, freqs: Frequencies, *, exact: bool = False) -> float:
    """Largest coefficient of ``poisson(H0, chi) - Z - Q``.

    In floating point the generic bracket rebuilds ``i Omega chi_j`` from
    ``l`` products ``omega_a chi_j`` that cancel when ``|Omega|`` is small, so
    its rounding error scales like ``sum |omega| / |Omega|``. ``exact=True``
    evaluates the bracket and the subtraction in rational arithmetic on the
    stored binary values, leaving only the rounding of ``chi`` itself.
    """
    if not exact:
        res = homological_operator(chi, freqs) - Z - Q
        return max((abs(complex(c)) for _, c in res.items()), default=0.0)

    def part(P, imag):
        return Polynomial._from_buckets(
            {k: {j: Fraction(complex(c).imag if imag else complex(c).real) for j, c in b.items()} for k, b in P._buckets.items()},
            P.max_degree,
        )

    H0 = part(quadratic_hamiltonian(freqs), False)
    # poisson(H0, A + iB) = i raw(H0, A) - raw(H0, B) with the unit-free bracket ``raw``
    re = -_bracket(H0, part(chi, True), 1) - part(Z, False) - part(Q, False)
    im = _bracket(H0, part(chi, False), 1) - part(Z, True) - part(Q, True)
    keys = {j for j, _ in re.items()} | {j for j, _ in im.items()}
    return max((math.hypot(float(re[j]), float(im[j])) for j in keys), default=0.0)


def compositions(total: int, parts: int, low: int = 3):
    """Ordered tuples of ``parts`` integers ``>= low`` summing to ``total``."""
    if parts == 1:
        if total >= low:
            yield (total,)
        return
    for first in range(low, total - low * (parts - 1) + 1):
        for rest in compositions(total - first, parts - 1, low):
            yield (first,) + rest


def bernoulli_terms(m: int) -> list[tuple[int, tuple[int, ...]]]:
    """``(k, (l_1, ..., l_{k+1}))`` entering ``Q_m``: ``sum l = m + 2k``, ``l_i >= 3``."""
    out = []
    for k in range(1, m - 2):
        for ls in compositions(m + 2 * k, k + 1):
            out.append((k, ls))
    return out


@dataclass
class NormalFormResult:
    chi: dict  # degree -> Polynomial
    Z: dict
    N: float
    r: int
    diagnostics: dict = field(default_factory=dict)

    def chi_total(self) -> Polynomial:
        return _sum(self.chi.values())

    def Z_total(self) -> Polynomial:
        return _sum(self.Z.values())

    def to_json(self) -> dict:
        return {
            "N": self.N,
            "r": self.r,
            "chi": {str(k): p.to_json() for k, p in sorted(self.chi.items())},
            "Z": {str(k): p.to_json() for k, p in sorted(self.Z.items())},
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_json(cls, data: dict) -> "NormalFormResult":
        return cls(
            chi={int(k): Polynomial.from_json(v) for k, v in data["chi"].items()},
            Z={int(k): Polynomial.from_json(v) for k, v in data["Z"].items()},
            N=data["N"],
            r=data["r"],
            diagnostics=data.get("diagnostics", {}),
        )


def _sum(polys) -> Polynomial:
    out = Polynomial()
    for p in polys:
        out = out + p
    return out


def build(
    P_list,
    freqs: Frequencies,
    N: float,
    r: int,
    gamma: float | None = None,
    nu: float | None = None,
    c0: float | None = None,
    *,
    max_compositions: int = 100_000,
    chop: float = 0.0,
    max_degree: int = DEFAULT_MAX_DEGREE,
) -> NormalFormResult:
    """Solve the homological equations for ``m = 3 .. r``.

    ``P_list`` holds ``P_3, P_4, ...``; missing degrees count as zero.
    """
    if r < 3:
        raise ValueError("r must be >= 3")
    if r > max_degree:
        raise ValueError(f"r={r} exceeds degree cap {max_degree}")
    n_comp = sum(len(bernoulli_terms(m)) for m in range(3, r + 1))
    if n_comp > max_compositions:
        raise ValueError(f"{n_comp} bracket compositions exceed the budget {max_compositions}")

    zero = Polynomial(max_degree=max_degree)
    P = {k: zero for k in range(3, r + 1)}
    for i, p in enumerate(P_list):
        k = i + 3
        if k <= r:
            P[k] = p.part(k) if p else zero
    chi: dict[int, Polynomial] = {}
    Z: dict[int, Polynomial] = {}
    nested: dict[tuple, Polynomial] = {}

    def chain(ls: tuple[int, ...]) -> Polynomial:
        # ad(chi_l1) ... ad(chi_lk) (Z - P)_l(k+1), memoized on suffixes
        if ls in nested:
            return nested[ls]
        if len(ls) == 1:
            val = Z[ls[0]] - P[ls[0]]
        else:
            inner = chain(ls[1:])
            val = ad(chi[ls[0]], inner) if (inner and chi[ls[0]]) else zero
            if chop:
                val = val.chop(chop)
        nested[ls] = val
        return val

    diag = {"degrees": {}}
    for m in range(3, r + 1):
        Q = -P[m]
        for k in range(3, m):
            if chi[k] and P[m + 2 - k]:
                Q = Q - ad(chi[k], P[m + 2 - k])
        for k, ls in bernoulli_terms(m):
            Bk = bernoulli(k)
            if Bk == 0:
                continue
            term = chain(ls)
            if term:
                Q = Q + term * float(Bk / math.factorial(k))
        if chop:
            Q = Q.chop(chop)
        Q = Q.part(m)
        chi_m, Z_m = solve_homological(Q, freqs, N, gamma, nu, c0)
        chi[m], Z[m] = chi_m, Z_m
        divs = [abs(divisor(j, freqs)) for j, _ in chi_m.items()]
        entry = {
            "Q_norm": Q.norm(),
            "chi_norm": chi_m.norm(),
            "Z_norm": Z_m.norm(),
            "chi_terms": len(chi_m),
            "Z_terms": len(Z_m),
            "min_divisor": min(divs) if divs else None,
            "residual": homological_residual(chi_m, Z_m, Q, freqs),
            "Q_max_coeff": max((abs(complex(c)) for _, c in Q.items()), default=0.0),
            "normal_form": not nform_split(Z_m, N)[1],
        }
        if gamma is not None:
            entry["chi_bound"] = N ** (nu * m) / (gamma * c0 ** m) * entry["Q_norm"]
            entry["homol_bounds_ok"] = entry["Z_norm"] <= entry["Q_norm"] and entry["chi_norm"] <= entry["chi_bound"]
        if nu is not None and N >= 1:
            s = entry["chi_norm"] + entry["Z_norm"]
            entry["chim_C"] = (s ** (1.0 / m ** 2)) / (m * N ** nu) if s > 0 else 0.0
        diag["degrees"][str(m)] = entry
    all_divs = [e["min_divisor"] for e in diag["degrees"].values() if e["min_divisor"] is not None]
    diag["min_divisor"] = min(all_divs) if all_divs else None
    cs = [e["chim_C"] for e in diag["degrees"].values() if "chim_C" in e]
    if cs:
        diag["chim_C"] = max(cs)
    return NormalFormResult(chi, Z, N, r, diag)


class DivergenceError(RuntimeError):
    pass


def _rk4(field_fn, z: np.ndarray, h: float) -> np.ndarray:
    k1 = field_fn(z)
    k2 = field_fn(z + 0.5 * h * k1)
    k3 = field_fn(z + 0.5 * h * k2)
    k4 = field_fn(z + h * k3)
    return z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def lie_transform(chi_list, z0: State, substeps: int = 32, time: float = 1.0) -> State:
    """Time-``time`` flow of ``sum chi`` by fixed-step RK4."""
    chi = _sum(chi_list.values() if isinstance(chi_list, dict) else chi_list)
    if not chi:
        return z0
    lat = z0.lattice
    z = z0.z.copy()
    h = time / substeps
    ref = max(np.sum(np.abs(z)), np.finfo(float).tiny)
    fn = lambda y: chi.vector_field_array(lat, y)
    for _ in range(substeps):
        z = _rk4(fn, z, h)
        if not np.all(np.isfinite(z)) or np.sum(np.abs(z)) > 2 * ref:
            raise DivergenceError("Lie transform left the neighbourhood of the initial state")
    return State(lat, z)


def choose_parameters(epsilon: float, beta: float) -> tuple[int, int]:
    """``N = ceil(|ln eps|^(1+beta))``, ``r = max(3, floor(|ln eps|^beta))``."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    L = abs(math.log(epsilon))
    # round before ceil/floor so that e.g. eps = e^-10 gives exact powers
    N = math.ceil(round(L ** (1 + beta), 9))
    r = max(3, math.floor(round(L ** beta, 9)))
    return N, r


def total_hamiltonian_value(P_list, freqs: Frequencies, z: State) -> complex:
    val = h0_value(freqs, z)
    for p in P_list:
        if p:
            val += complex(p.evaluate_array(z.lattice, z.z))
    return val


def verify_conjugacy(
    P_list,
    result: NormalFormResult,
    freqs: Frequencies,
    amplitudes,
    *,
    seed: int = 0,
    decay: float = 0.5,
    substeps: int = 32,
    tol: float = 0.2,
    noise: float = 1e-13,
) -> dict:
    """Fit the log-log slope of ``|(H0+P)(Phi(z)) - H0(z) - Z(z)|`` in the amplitude of ``z``."""
    amps = sorted(float(a) for a in amplitudes)
    if len(amps) < 2:
        raise ValueError("need at least two amplitudes")
    lat = freqs.lattice
    rng = np.random.default_rng(seed)
    zhat = random_real_state(lat, rng, decay=decay)
    zhat = zhat * (1.0 / norm_rho(zhat, 0.0))
    Zt = result.Z_total()
    residuals, scales = [], []
    for s in amps:
        z = zhat * s
        y = lie_transform(result.chi, z, substeps)
        lhs = total_hamiltonian_value(P_list, freqs, y)
        rhs = h0_value(freqs, z) + (complex(Zt.evaluate_array(lat, z.z)) if Zt else 0)
        residuals.append(abs(lhs - rhs))
        scales.append(abs(h0_value(freqs, z)) + 1e-300)
    expected = result.r + 1
    report = {"amplitudes": amps, "residuals": residuals, "expected_slope": expected}
    if all(res <= noise * sc for res, sc in zip(residuals, scales)):
        report.update(slope=None, zero=True, passed=True)
        return report
    slope = float(np.polyfit(np.log(amps), np.log(np.maximum(residuals, 1e-300)), 1)[0])
    report.update(slope=slope, zero=False, passed=slope >= expected - tol)
    return report


def field_bound_scan(result: NormalFormResult, lattice: Lattice, rho: float, M: float, eps_grid, *, samples: int = 8, seed: int = 0) -> dict:
    """Check ``||X_Z(z)|| + ||X_chi(z)|| <= 2 eps^(3/2)`` on random ``z`` with ``||z||_rho = M eps``.

    Returns per-eps maxima and the largest grid eps below which every check passed.
    """
    chi, Z = result.chi_total(), result.Z_total()
    rng = np.random.default_rng(seed)
    dirs = []
    for _ in range(samples):
        z = random_real_state(lattice, rng, decay=rho + 0.5)
        dirs.append(z * (1.0 / norm_rho(z, rho)))
    rows = []
    for eps in sorted(eps_grid):
        worst = 0.0
        for zh in dirs:
            z = zh * (M * eps)
            tot = 0.0
            for p in (chi, Z):
                if p:
                    tot += norm_rho(State(lattice, p.vector_field_array(lattice, z.z)), rho)
            worst = max(worst, tot)
        rows.append({"eps": eps, "field": worst, "bound": 2 * eps ** 1.5, "ok": worst <= 2 * eps ** 1.5})
    threshold = None
    for row in rows:
        if row["ok"]:
            threshold = row["eps"]
        else:
            break
    return {"rows": rows, "largest_passing_eps": threshold}


def save_result(path, result: NormalFormResult, extra: dict | None = None) -> None:
    data = result.to_json()
    if extra:
        data.update(extra)
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True), encoding="utf-8")


def load_result(path) -> tuple[NormalFormResult, dict]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return NormalFormResult.from_json(data), data
