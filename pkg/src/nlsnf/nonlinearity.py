"""Taylor expansion of the nonlinearity ``g(u, conj u)`` into homogeneous polynomials."""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lattice import Lattice
from .polynomial import DEFAULT_MAX_DEGREE, Polynomial, zero_momentum_monomials


@dataclass(frozen=True)
class SeriesSpec:
    """Truncated Taylor table ``g(v1, v2) = sum g[k1, k2] v1^k1 v2^k2``.

    ``g[k1, k2]`` is the Taylor coefficient ``d^k1 d^k2 g(0, 0) / (k1! k2!)``.
    """

    terms: dict = field(default_factory=dict)  # (k1, k2) -> complex
    R0: float = 1.0
    M: float | None = None

    def __post_init__(self):
        clean = {}
        for (k1, k2), c in self.terms.items():
            k1, k2 = int(k1), int(k2)
            if k1 < 0 or k2 < 0:
                raise ValueError("exponents must be nonnegative")
            if c == 0:
                continue
            if k1 + k2 <= 2:
                raise ValueError(f"g must vanish to order 3 at the origin; got term ({k1}, {k2})")
            clean[(k1, k2)] = complex(c)
        for (k1, k2), c in clean.items():
            partner = clean.get((k2, k1), 0)
            if abs(partner - np.conj(c)) > 1e-14 * max(1.0, abs(c)):
                raise ValueError(f"g(z, conj z) is not real: g[{k1},{k2}] and g[{k2},{k1}] are not conjugate")
        object.__setattr__(self, "terms", dict(sorted(clean.items())))
        if not self.R0 > 0:
            raise ValueError("R0 must be positive")

    @property
    def sup_bound(self) -> float:
        """``M``; defaults to ``sum |g[k1,k2]|``, which dominates every ``||P_k||`` when ``R0 = 1``."""
        if self.M is not None:
            return self.M
        return math.fsum(abs(c) for c in self.terms.values())

    @property
    def max_degree(self) -> int:
        return max((k1 + k2 for k1, k2 in self.terms), default=0)

    @property
    def gauge_invariant(self) -> bool:
        """True when ``g`` depends on ``|u|^2`` only."""
        return all(k1 == k2 for k1, k2 in self.terms)

    def g(self, v1, v2):
        out = 0
        for (k1, k2), c in self.terms.items():
            out = out + c * v1 ** k1 * v2 ** k2
        return out

    def dg_dv2(self, v1, v2):
        """``d g / d v2``; the nonlinear part of the equation is ``u_t = -i dg/dv2(u, conj u)``."""
        out = 0
        for (k1, k2), c in self.terms.items():
            if k2:
                out = out + c * k2 * v1 ** k1 * v2 ** (k2 - 1)
        return out

    def gauge_derivative(self, s):
        """``G'(s)`` for ``g = G(|u|^2)``."""
        if not self.gauge_invariant:
            raise ValueError("nonlinearity is not gauge invariant")
        out = 0
        for (k, _), c in self.terms.items():
            out = out + k * c.real * s ** (k - 1)
        return out

    def to_json(self) -> dict:
        return {
            "terms": [{"k1": k1, "k2": k2, "re": c.real, "im": c.imag} for (k1, k2), c in self.terms.items()],
            "R0": self.R0,
            "M": self.M,
        }

    @classmethod
    def from_json(cls, data: dict) -> "SeriesSpec":
        terms = {(t["k1"], t["k2"]): complex(t["re"], t.get("im", 0.0)) for t in data["terms"]}
        return cls(terms, data.get("R0", 1.0), data.get("M"))


def preset_power(p: int, a: float = 1.0) -> SeriesSpec:
    """``g = a/(p+1) |u|^(2p+2)``, giving the standard NLS with ``a |u|^(2p) u``."""
    if p < 1:
        raise ValueError("p must be >= 1")
    return SeriesSpec({(p + 1, p + 1): a / (p + 1)})


def parse_nonlinearity(text: str) -> SeriesSpec:
    """Parse ``power:p=1,a=1`` or a path to a SeriesSpec JSON file."""
    m = re.fullmatch(r"power(?::(.*))?", text.strip())
    if m:
        kw = {"p": 1, "a": 1.0}
        if m.group(1):
            for part in m.group(1).split(","):
                k, v = part.split("=")
                kw[k.strip()] = float(v)
        return preset_power(int(kw["p"]), float(kw["a"]))
    path = Path(text)
    if path.exists():
        return SeriesSpec.from_json(json.loads(path.read_text(encoding="utf-8")))
    raise ValueError(f"unknown nonlinearity {text!r}")


def _orderings(counts) -> int:
    n = math.factorial(sum(counts))
    for c in counts:
        n //= math.factorial(c)
    return n


def expand(spec: SeriesSpec, lattice: Lattice, kmax: int, max_degree: int = DEFAULT_MAX_DEGREE) -> list[Polynomial]:
    """Homogeneous pieces ``P_3 .. P_kmax`` of ``P(z) = (2 pi)^-d int g(u, conj u) dx``.

    The integral selects zero-momentum products exactly. A product
    ``xi_a1..xi_ak1 eta_b1..eta_bk2`` collects ``g[k1,k2]`` once per ordering of
    the ``a``'s and of the ``b``'s.
    """
    if kmax > max_degree:
        raise ValueError(f"kmax={kmax} exceeds degree cap {max_degree}")
    out = []
    for k in range(3, kmax + 1):
        terms = {}
        for (k1, k2), c in spec.terms.items():
            if k1 + k2 != k:
                continue
            for j in zero_momentum_monomials(lattice, k, k1):
                xs = Counter(e.a for e in j if e.delta == 1).values()
                ys = Counter(e.a for e in j if e.delta == -1).values()
                terms[j] = c * _orderings(list(xs)) * _orderings(list(ys))
        out.append(Polynomial(terms, max_degree=max_degree))
    return out


def quadrature_value(spec: SeriesSpec, u: np.ndarray) -> complex:
    """``(2 pi)^-d int g(u, conj u) dx`` by the uniform-grid mean (exact for band-limited integrands)."""
    return complex(np.mean(spec.g(u, np.conj(u))))
