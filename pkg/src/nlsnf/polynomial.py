"""Zero-momentum polynomial Hamiltonians on the index set Z^d x {+1, -1}.

A polynomial stores one coefficient ``c_j`` per *unordered* multi-index
``j = (j_1, ..., j_l)``, so that ``P(z) = sum_j c_j z_{j_1} ... z_{j_l}``.
Multi-indices are plain tuples of :class:`~nlsnf.lattice.Index` sorted in
their natural order (site ``a`` lexicographically, then ``delta``).

The coefficient norm is taken on the symmetric representation over ordered
tuples, i.e. on ``c_j / ord(j)`` where ``ord(j)`` counts the distinct
orderings of ``j``. This is the smallest sup over all ordered
representations, and it is the normalisation under which the bracket,
vector-field and Taylor-coefficient estimates hold.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator, Mapping

import numpy as np

from .lattice import Index, Lattice, State, make_index

DEFAULT_MAX_DEGREE = 12

MultiIndex = tuple  # tuple[Index, ...] in canonical order


class DegreeOverflowError(ValueError):
    """A product or bracket would exceed the configured degree cap."""


def canonical(entries: Iterable) -> MultiIndex:
    """Canonical (sorted) multi-index; accepts Index or ``(a, delta)`` pairs."""
    out = []
    for e in entries:
        if not isinstance(e, Index):
            e = make_index(*e)
        out.append(e)
    return tuple(sorted(out))


def conjugate(j: MultiIndex) -> MultiIndex:
    return tuple(sorted(Index(e.a, -e.delta) for e in j))


def momentum(j: MultiIndex) -> tuple[int, ...]:
    """Signed lattice sum ``a_1 delta_1 + ... + a_l delta_l``."""
    if not j:
        return ()
    d = len(j[0].a)
    return tuple(sum(e.delta * e.a[i] for e in j) for i in range(d))


def moduli(j: MultiIndex) -> list[float]:
    return [e.modulus for e in j]


def mu(j: MultiIndex) -> float:
    """Third largest of ``|j_1|, ..., |j_l|``; 0 when ``l < 3``."""
    if len(j) < 3:
        return 0.0
    return sorted(moduli(j), reverse=True)[2]


def is_resonant(j: MultiIndex) -> bool:
    """True iff ``j`` pairs off into conjugate couples ``(a, +1), (a, -1)``."""
    if len(j) % 2:
        return False
    cnt = Counter(j)
    return all(cnt[e] == cnt[e.conjugate()] for e in cnt)


def orderings(j: MultiIndex) -> int:
    """Number of distinct ordered tuples with the multiset ``j``."""
    n = math.factorial(len(j))
    for m in Counter(j).values():
        n //= math.factorial(m)
    return n


def N_weight(j: MultiIndex) -> float:
    """Product ``prod_k (1 + |j_k|)``."""
    return math.prod(1.0 + e.modulus for e in j)


@dataclass(frozen=True, eq=False)
class Frequencies:
    """Linear frequencies ``omega_a`` on every lattice site."""

    lattice: Lattice
    omega: np.ndarray

    def __post_init__(self):
        w = np.array(self.omega, dtype=float).reshape(-1)
        if w.shape[0] != self.lattice.size:
            raise ValueError("one frequency per lattice site required")
        w.setflags(write=False)
        object.__setattr__(self, "omega", w)

    def __getitem__(self, a) -> float:
        if isinstance(a, (int, np.integer)):
            a = (int(a),)
        return float(self.omega[self.lattice.position(a)])

    @property
    def slot_omega(self) -> np.ndarray:
        """Signed frequencies ``delta * omega_a`` per packed slot."""
        return np.concatenate([self.omega, -self.omega])

    def to_json(self) -> dict:
        return {"lattice": self.lattice.to_json(), "omega": self.omega.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "Frequencies":
        return cls(Lattice(**data["lattice"]), np.array(data["omega"]))


def divisor(j: MultiIndex, freqs: Frequencies) -> float:
    """``Omega(j) = delta_1 omega_{a_1} + ... + delta_l omega_{a_l}``."""
    return math.fsum(e.delta * freqs[e.a] for e in j)


class Polynomial:
    """Real zero-momentum polynomial, bucketed by degree.

    Instances are immutable; arithmetic returns new polynomials.
    """

    __slots__ = ("_buckets", "max_degree", "_compiled")

    def __init__(self, terms: Mapping | Iterable = (), *, max_degree: int = DEFAULT_MAX_DEGREE, zero_momentum: bool = True):
        """``zero_momentum=False`` admits general monomials (bracket algebra only)."""
        self.max_degree = max_degree
        self._compiled = {}
        buckets: dict[int, dict] = {}
        items = terms.items() if isinstance(terms, Mapping) else terms
        for key, c in items:
            j = canonical(key)
            if len(j) < 2:
                raise ValueError(f"monomials must have degree >= 2, got {j}")
            if len(j) > max_degree:
                raise DegreeOverflowError(f"degree {len(j)} exceeds cap {max_degree}")
            if zero_momentum and any(momentum(j)):
                raise ValueError(f"monomial {j} has nonzero momentum {momentum(j)}")
            if isinstance(c, (complex, float, int)) and not np.isfinite(c):
                raise ValueError(f"non-finite coefficient for {j}")
            b = buckets.setdefault(len(j), {})
            b[j] = b.get(j, 0) + c
        self._buckets = _drop_zeros(buckets)

    @classmethod
    def _from_buckets(cls, buckets: dict, max_degree: int = DEFAULT_MAX_DEGREE) -> "Polynomial":
        p = cls.__new__(cls)
        p.max_degree = max_degree
        p._compiled = {}
        p._buckets = _drop_zeros(buckets)
        return p

    # -- container protocol -------------------------------------------------
    @property
    def degrees(self) -> list[int]:
        return sorted(self._buckets)

    @property
    def degree(self) -> int:
        return max(self._buckets, default=0)

    def terms(self, degree: int | None = None) -> dict:
        if degree is None:
            return {j: c for k in self.degrees for j, c in self._buckets[k].items()}
        return dict(self._buckets.get(degree, {}))

    def items(self) -> Iterator[tuple[MultiIndex, complex]]:
        for k in self.degrees:
            yield from sorted(self._buckets[k].items())

    def __len__(self) -> int:
        return sum(len(b) for b in self._buckets.values())

    def __bool__(self) -> bool:
        return bool(self._buckets)

    def __getitem__(self, key) -> complex:
        j = canonical(key)
        return self._buckets.get(len(j), {}).get(j, 0)

    def __repr__(self) -> str:
        return f"Polynomial({len(self)} terms, degrees={self.degrees})"

    def part(self, degree: int) -> "Polynomial":
        """Homogeneous component of the given degree."""
        return Polynomial._from_buckets({degree: dict(self._buckets.get(degree, {}))}, self.max_degree)

    def is_homogeneous(self) -> bool:
        return len(self._buckets) <= 1

    # -- arithmetic ---------------------------------------------------------
    def _combine(self, other: "Polynomial", sign: int) -> "Polynomial":
        out = {k: dict(b) for k, b in self._buckets.items()}
        for k, b in other._buckets.items():
            tgt = out.setdefault(k, {})
            for j, c in b.items():
                tgt[j] = tgt.get(j, 0) + sign * c
        return Polynomial._from_buckets(out, max(self.max_degree, other.max_degree))

    def __add__(self, other: "Polynomial") -> "Polynomial":
        return self._combine(other, 1)

    def __sub__(self, other: "Polynomial") -> "Polynomial":
        return self._combine(other, -1)

    def __neg__(self) -> "Polynomial":
        return self * -1

    def __mul__(self, c) -> "Polynomial":
        return Polynomial._from_buckets(
            {k: {j: c * v for j, v in b.items()} for k, b in self._buckets.items()}, self.max_degree
        )

    __rmul__ = __mul__

    def conjugate(self) -> "Polynomial":
        """The polynomial with coefficients ``conj(c_{conj j})`` (equal to self iff real)."""
        out = {}
        for k, b in self._buckets.items():
            out[k] = {conjugate(j): np.conj(c) for j, c in b.items()}
        return Polynomial._from_buckets(out, self.max_degree)

    def is_real(self, tol: float = 1e-12) -> bool:
        for k, b in self._buckets.items():
            for j, c in b.items():
                cj = b.get(conjugate(j), 0)
                if abs(complex(cj) - np.conj(complex(c))) > tol * max(1.0, abs(complex(c))):
                    return False
        return True

    def chop(self, tol: float) -> "Polynomial":
        """Drop coefficients with modulus ``<= tol``."""
        return Polynomial._from_buckets(
            {k: {j: c for j, c in b.items() if abs(c) > tol} for k, b in self._buckets.items()}, self.max_degree
        )

    def to_float(self) -> "Polynomial":
        return Polynomial._from_buckets(
            {k: {j: complex(c) for j, c in b.items()} for k, b in self._buckets.items()}, self.max_degree
        )

    def max_abs_diff(self, other: "Polynomial") -> float:
        diff = self - other
        return max((abs(complex(c)) for _, c in diff.items()), default=0.0)

    def norm(self) -> float:
        """``sum_l sup_j |c_j| / ord(j)`` over the degree buckets."""
        total = []
        for k in self.degrees:
            total.append(max(abs(complex(c)) / orderings(j) for j, c in self._buckets[k].items()))
        return math.fsum(total)

    # -- numerics -----------------------------------------------------------
    def compiled(self, lattice: Lattice) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per degree: packed slot array ``(n_terms, degree)`` and coefficients.

        Monomials touching a site outside the lattice are dropped; they vanish
        identically on states supported on the lattice, and so does their
        contribution to the on-lattice vector field.
        """
        if lattice not in self._compiled:
            out = []
            for k in self.degrees:
                slots, coefs = [], []
                for j, c in self._buckets[k].items():
                    if all(e.a in lattice for e in j):
                        slots.append([lattice.slot(e) for e in j])
                        coefs.append(complex(c))
                if slots:
                    out.append((np.array(slots, dtype=np.int64), np.array(coefs, dtype=complex)))
            self._compiled[lattice] = out
        return self._compiled[lattice]

    def evaluate_array(self, lattice: Lattice, z: np.ndarray) -> np.ndarray:
        """Evaluate on packed arrays ``z`` of shape ``(..., 2n)``."""
        z = np.asarray(z, dtype=complex)
        total = np.zeros(z.shape[:-1], dtype=complex)
        for slots, coefs in self.compiled(lattice):
            total = total + np.prod(z[..., slots], axis=-1) @ coefs
        return total

    def gradient_array(self, lattice: Lattice, z: np.ndarray) -> np.ndarray:
        """``dP/dz_j`` for every slot, for a single packed vector ``z``."""
        z = np.asarray(z, dtype=complex)
        nslots = 2 * lattice.size
        grad_re = np.zeros(nslots)
        grad_im = np.zeros(nslots)
        for slots, coefs in self.compiled(lattice):
            vals = z[slots]
            k = slots.shape[1]
            # products of all factors but one, without division
            prefix = np.ones_like(vals)
            suffix = np.ones_like(vals)
            for p in range(1, k):
                prefix[:, p] = prefix[:, p - 1] * vals[:, p - 1]
                suffix[:, k - 1 - p] = suffix[:, k - p] * vals[:, k - p]
            partial = prefix * suffix * coefs[:, None]
            flat = slots.ravel()
            grad_re += np.bincount(flat, weights=partial.real.ravel(), minlength=nslots)
            grad_im += np.bincount(flat, weights=partial.imag.ravel(), minlength=nslots)
        return grad_re + 1j * grad_im

    def vector_field_array(self, lattice: Lattice, z: np.ndarray) -> np.ndarray:
        """``xi' = -i dP/deta``, ``eta' = +i dP/dxi`` on packed arrays."""
        g = self.gradient_array(lattice, z)
        n = lattice.size
        return np.concatenate([-1j * g[n:], 1j * g[:n]])

    # -- serialization ------------------------------------------------------
    def to_json(self) -> list:
        out = []
        for k in self.degrees:
            entries = []
            for j, c in sorted(self._buckets[k].items()):
                c = complex(c)
                entries.append({"indices": [[*e.a, e.delta] for e in j], "re": c.real, "im": c.imag})
            out.append({"degree": k, "entries": entries})
        return out

    @classmethod
    def from_json(cls, data: list, max_degree: int = DEFAULT_MAX_DEGREE) -> "Polynomial":
        terms = {}
        for bucket in data:
            for e in bucket["entries"]:
                key = tuple(make_index(tuple(ix[:-1]), ix[-1]) for ix in e["indices"])
                if len(key) != bucket["degree"]:
                    raise ValueError(f"entry of degree {len(key)} filed under degree {bucket['degree']}")
                terms[key] = complex(e["re"], e["im"])
        return cls(terms, max_degree=max_degree)

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def _drop_zeros(buckets: dict) -> dict:
    out = {}
    for k, b in buckets.items():
        kept = {j: c for j, c in b.items() if c != 0}
        if kept:
            out[k] = kept
    return out


# -- module-level operations -------------------------------------------------

def poly_norm(P: Polynomial) -> float:
    return P.norm()


def evaluate(P: Polynomial, z: State) -> complex:
    return complex(P.evaluate_array(z.lattice, z.z))


def vector_field(P: Polynomial, z: State) -> State:
    """Hamiltonian vector field: component ``(a, delta)`` is ``-i delta dP/dz_(a, -delta)``."""
    return State(z.lattice, P.vector_field_array(z.lattice, z.z))


def poisson(P: Polynomial, Q: Polynomial, *, exact: bool = False) -> Polynomial:
    """``{P, Q} = i sum_a (dP/deta_a dQ/dxi_a - dP/dxi_a dQ/deta_a)``.

    With ``exact=True`` the imaginary unit is ``sympy.I`` so that rational
    (sympy) coefficients stay exact.
    """
    if not P or not Q:
        return Polynomial._from_buckets({}, max(P.max_degree, Q.max_degree))
    cap = max(P.max_degree, Q.max_degree)
    top = P.degree + Q.degree - 2
    if top > cap:
        raise DegreeOverflowError(f"bracket degree {top} exceeds cap {cap}")
    if exact:
        import sympy

        unit = sympy.I
    else:
        unit = 1j
    return _bracket(P, Q, unit)


def _bracket(P: Polynomial, Q: Polynomial, unit) -> Polynomial:
    """Bracket with ``i`` replaced by ``unit``; ``unit = 1`` keeps rational coefficients rational."""
    cap = max(P.max_degree, Q.max_degree)
    if not P or not Q:
        return Polynomial._from_buckets({}, cap)
    # monomials of Q grouped by each index they contain: index -> [(rest, coef * mult)]
    qindex: dict[Index, list] = defaultdict(list)
    for j, c in Q.items():
        cnt = Counter(j)
        for e, m in cnt.items():
            qindex[e].append((_remove_one(j, e), c * m))

    out: dict[int, dict] = defaultdict(dict)
    for j, c in P.items():
        cnt = Counter(j)
        for e, m in cnt.items():
            partners = qindex.get(e.conjugate())
            if not partners:
                continue
            rest = _remove_one(j, e)
            f = -unit * e.delta * m * c
            for qrest, qc in partners:
                key = tuple(sorted(rest + qrest))
                b = out[len(key)]
                b[key] = b.get(key, 0) + f * qc
    return Polynomial._from_buckets(dict(out), cap)


def _remove_one(j: MultiIndex, e: Index) -> MultiIndex:
    i = j.index(e)
    return j[:i] + j[i + 1:]


def nform_split(P: Polynomial, N: float) -> tuple[Polynomial, Polynomial]:
    """Split into (resonant or ``mu > N`` part, remainder)."""
    keep: dict[int, dict] = {}
    rest: dict[int, dict] = {}
    for k in P.degrees:
        for j, c in P.terms(k).items():
            tgt = keep if (is_resonant(j) or mu(j) > N) else rest
            tgt.setdefault(k, {})[j] = c
    return Polynomial._from_buckets(keep, P.max_degree), Polynomial._from_buckets(rest, P.max_degree)


def is_normal_form(P: Polynomial, N: float) -> bool:
    return not nform_split(P, N)[1]


def quadratic_hamiltonian(freqs: Frequencies) -> Polynomial:
    """``H0 = sum_a omega_a xi_a eta_a`` as a degree-2 polynomial."""
    terms = {}
    for s, w in zip(freqs.lattice.sites, freqs.omega):
        a = tuple(int(x) for x in s)
        if w != 0:
            terms[(Index(a, -1), Index(a, 1))] = float(w)
    return Polynomial(terms)


def h0_value(freqs: Frequencies, z: State) -> complex:
    return complex(np.sum(freqs.omega * z.xi * z.eta))


# -- enumeration and random generation ----------------------------------------

@lru_cache(maxsize=64)
def zero_momentum_monomials(lattice: Lattice, degree: int, n_xi: int | None = None) -> tuple[MultiIndex, ...]:
    """All zero-momentum multi-indices of a degree on the lattice.

    With ``n_xi`` given, only those with exactly ``n_xi`` entries of sign +1.
    """
    import itertools

    sites = [tuple(int(x) for x in s) for s in lattice.sites]
    splits = [n_xi] if n_xi is not None else range(degree + 1)
    out = []
    for k1 in splits:
        k2 = degree - k1
        by_mom: dict[tuple, list] = defaultdict(list)
        for combo in itertools.combinations_with_replacement(range(len(sites)), k2):
            mom = tuple(sum(sites[i][c] for i in combo) for c in range(lattice.d))
            by_mom[mom].append(combo)
        for combo in itertools.combinations_with_replacement(range(len(sites)), k1):
            mom = tuple(sum(sites[i][c] for i in combo) for c in range(lattice.d))
            for other in by_mom.get(mom, ()):
                key = [Index(sites[i], 1) for i in combo] + [Index(sites[i], -1) for i in other]
                out.append(tuple(sorted(key)))
    return tuple(sorted(out))


def realify(terms: Mapping[MultiIndex, complex]) -> dict:
    """Symmetrize ``terms`` so that ``c_{conj j} = conj(c_j)``."""
    out: dict = {}
    for j, c in terms.items():
        jb = conjugate(j)
        out[j] = out.get(j, 0) + c / 2
        out[jb] = out.get(jb, 0) + np.conj(c) / 2
    return out


def random_polynomial(
    lattice: Lattice,
    degree: int,
    n_terms: int,
    rng: np.random.Generator,
    *,
    scale: float = 1.0,
    select=None,
    max_degree: int = DEFAULT_MAX_DEGREE,
) -> Polynomial:
    """Random real homogeneous zero-momentum polynomial.

    ``select`` optionally filters the candidate multi-indices.
    """
    pool = zero_momentum_monomials(lattice, degree)
    if select is not None:
        pool = tuple(j for j in pool if select(j))
    if not pool:
        return Polynomial(max_degree=max_degree)
    picks = rng.choice(len(pool), size=min(n_terms, len(pool)), replace=False)
    terms = {}
    for i in picks:
        c = scale * complex(rng.normal(), rng.normal())
        terms[pool[i]] = c
    return Polynomial(realify(terms), max_degree=max_degree)


def random_real_state(lattice: Lattice, rng: np.random.Generator, decay: float = 0.0, scale: float = 1.0) -> State:
    xi = (rng.normal(size=lattice.size) + 1j * rng.normal(size=lattice.size)) * np.exp(-decay * lattice.moduli)
    return State.from_xi(lattice, scale * xi)
