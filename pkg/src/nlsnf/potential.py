"""Random convolution potentials, linear frequencies and small-divisor checks."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lattice import Index, Lattice
from .polynomial import Frequencies, MultiIndex, N_weight, divisor, is_resonant


@dataclass(frozen=True, eq=False)
class Potential:
    """Fourier symbol ``v_a = R v'_a / (1 + |a|)^m`` of a convolution potential."""

    m: float
    R: float
    lattice: Lattice
    v: np.ndarray = field(repr=False)
    seed: int | None = None

    def __post_init__(self):
        v = np.array(self.v, dtype=float).reshape(-1)
        if v.shape[0] != self.lattice.size:
            raise ValueError("one potential coefficient per lattice site required")
        v.setflags(write=False)
        object.__setattr__(self, "v", v)

    @property
    def normalized(self) -> np.ndarray:
        """``v'_a = v_a (1 + |a|)^m / R``; lies in [-1/2, 1/2] for members of the class."""
        return self.v * (1.0 + self.lattice.moduli) ** self.m / self.R

    def to_json(self) -> dict:
        return {
            "m": self.m,
            "R": self.R,
            "seed": self.seed,
            "lattice": self.lattice.to_json(),
            "v": self.v.tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "Potential":
        return cls(data["m"], data["R"], Lattice(**data["lattice"]), np.array(data["v"]), data.get("seed"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Potential":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _zigzag(x: int) -> int:
    return 2 * x if x >= 0 else -2 * x - 1


def site_uniform(seed: int, a: tuple[int, ...]) -> float:
    """Uniform draw on [-1/2, 1/2] from the Philox stream of site ``a``.

    The stream is keyed by ``(seed, zigzag(a))`` through ``SeedSequence``
    spawn keys, so the value at a site does not depend on the truncation or
    on the order in which sites are visited.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_zigzag(int(x)) for x in a))
    gen = np.random.Generator(np.random.Philox(ss))
    return float(gen.uniform(-0.5, 0.5))


def sample_potential(m: float, R: float, lattice: Lattice, seed: int) -> Potential:
    if not m > lattice.d / 2:
        raise ValueError(f"decay exponent m={m} must exceed d/2={lattice.d / 2}")
    if not R > 0:
        raise ValueError("scale R must be positive")
    vp = np.array([site_uniform(seed, tuple(s)) for s in lattice.sites])
    v = R * vp / (1.0 + lattice.moduli) ** m
    return Potential(m, R, lattice, v, seed)


def zero_potential(lattice: Lattice, m: float = 2.0, R: float = 1.0) -> Potential:
    return Potential(m, R, lattice, np.zeros(lattice.size), None)


def frequencies(V: Potential) -> Frequencies:
    """``omega_a = |a|^2 + v_a`` on every site."""
    sq = np.sum(V.lattice.sites.astype(float) ** 2, axis=1)
    return Frequencies(V.lattice, sq + V.v)


# -- non-resonance checks -----------------------------------------------------

def _bound_mu(m):
    # mu = 0 would make the bound infinite; moduli below 1 count as 1
    return np.maximum(m, 1.0)


def nonres_bound(gamma: float, c0: float, nu: float, r: int, mu_value) -> np.ndarray:
    """``gamma c0^r / max(mu, 1)^(nu r)``."""
    return gamma * c0 ** r / _bound_mu(np.asarray(mu_value, dtype=float)) ** (nu * r)


@dataclass
class TupleTable:
    """Vectorized enumeration of canonical non-resonant tuples of one length."""

    r: int
    slots: np.ndarray  # (n, r) packed slot indices, nondecreasing per row
    mu: np.ndarray
    momentum_zero: np.ndarray
    N: np.ndarray
    complete: bool = True


def _slot_arrays(lattice: Lattice):
    n = lattice.size
    sign = np.concatenate([np.ones(n), -np.ones(n)])
    site = np.concatenate([np.arange(n), np.arange(n)])
    return sign, site


def enumerate_tuples(lattice: Lattice, r: int, budget: int | None = None) -> TupleTable:
    """All non-resonant multisets of ``r`` packed slots (zero momentum not required)."""
    nslots = 2 * lattice.size
    total = math.comb(nslots + r - 1, r)
    complete = budget is None or total <= budget
    it = itertools.combinations_with_replacement(range(nslots), r)
    if not complete:
        it = itertools.islice(it, budget)
        total = budget
    slots = np.fromiter(itertools.chain.from_iterable(it), dtype=np.int64, count=total * r).reshape(-1, r)
    sign, site = _slot_arrays(lattice)
    sg = sign[slots]
    st = site[slots]
    n = lattice.size
    # resonant <=> every site appears equally often with both signs
    counts = np.zeros((len(slots), n), dtype=np.int64)
    rows = np.repeat(np.arange(len(slots)), r)
    np.add.at(counts, (rows, st.ravel()), sg.ravel().astype(np.int64))
    resonant = (r % 2 == 0) & np.all(counts == 0, axis=1)
    keep = ~resonant
    slots, sg, st = slots[keep], sg[keep], st[keep]
    mods = lattice.moduli[st]
    if r >= 3:
        mu_v = -np.sort(-mods, axis=1)[:, 2]
    else:
        mu_v = np.zeros(len(slots))
    mom = np.einsum("ij,ijk->ik", sg, lattice.sites[st].astype(float))
    return TupleTable(
        r=r,
        slots=slots,
        mu=mu_v,
        momentum_zero=np.all(mom == 0, axis=1),
        N=np.prod(1.0 + mods, axis=1),
        complete=complete,
    )


def table_divisors(table: TupleTable, freqs: Frequencies) -> np.ndarray:
    return np.sum(freqs.slot_omega[table.slots], axis=1)


def slots_to_multi_index(lattice: Lattice, slots) -> MultiIndex:
    return tuple(sorted(lattice.index_of_slot(int(s)) for s in slots))


@dataclass
class NonResReport:
    gamma: float
    nu: float
    c0: float
    r_max: int
    K: int
    violations: list = field(default_factory=list)  # (MultiIndex, divisor, bound)
    checked_count: int = 0
    complete: bool = True
    min_gap: dict = field(default_factory=dict)  # r -> min |Omega|
    zero_momentum_only: bool = False

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json(self) -> dict:
        return {
            "gamma": self.gamma,
            "nu": self.nu,
            "c0": self.c0,
            "r_max": self.r_max,
            "K": self.K,
            "checked_count": self.checked_count,
            "complete": self.complete,
            "zero_momentum_only": self.zero_momentum_only,
            "n_violations": len(self.violations),
            "violations": [
                {"indices": [[*e.a, e.delta] for e in j], "divisor": om, "bound": b}
                for j, om, b in self.violations[:1000]
            ],
            "min_gap": {str(r): g for r, g in sorted(self.min_gap.items())},
        }

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "min_gap"])
        for r, g in sorted(self.min_gap.items()):
            w.writerow([r, repr(g)])
        return buf.getvalue()


DEFAULT_BUDGET = 5_000_000


def check_nonres(
    freqs: Frequencies,
    r_max: int,
    gamma: float,
    nu: float,
    c0: float,
    *,
    K: int | None = None,
    budget: int = DEFAULT_BUDGET,
    zero_momentum_only: bool = False,
    max_violations: int | None = None,
) -> NonResReport:
    """Check ``|Omega(j)| >= gamma c0^r / mu(j)^(nu r)`` on every non-resonant tuple, ``3 <= r <= r_max``.

    ``K`` restricts the check to a sub-box of the frequency lattice.
    """
    if r_max < 3:
        raise ValueError("r_max must be >= 3")
    lat = freqs.lattice
    if K is not None and K < lat.K:
        freqs = restrict(freqs, K)
        lat = freqs.lattice
    report = NonResReport(gamma, nu, c0, r_max, lat.K, zero_momentum_only=zero_momentum_only)
    remaining = budget
    for r in range(3, r_max + 1):
        if remaining <= 0:
            report.complete = False
            break
        table = enumerate_tuples(lat, r, budget=remaining)
        remaining -= len(table.slots)
        report.complete &= table.complete
        om = table_divisors(table, freqs)
        mask = table.momentum_zero if zero_momentum_only else np.ones(len(om), dtype=bool)
        om, mu_v, slots = om[mask], table.mu[mask], table.slots[mask]
        report.checked_count += len(om)
        if len(om):
            report.min_gap[r] = float(np.min(np.abs(om)))
        bound = nonres_bound(gamma, c0, nu, r, mu_v)
        bad = np.flatnonzero(np.abs(om) < bound)
        if max_violations is not None:
            bad = bad[: max(0, max_violations - len(report.violations))]
        for i in bad:
            report.violations.append((slots_to_multi_index(lat, slots[i]), float(om[i]), float(bound[i])))
    return report


def restrict(freqs: Frequencies, K: int) -> Frequencies:
    """Frequencies on the sub-box of radius ``K``."""
    if K > freqs.lattice.K:
        raise ValueError(f"K={K} exceeds the lattice radius {freqs.lattice.K}")
    sub = Lattice(freqs.lattice.d, K)
    return Frequencies(sub, [freqs[tuple(s)] for s in sub.sites])


def default_nu(m: float, d: int) -> float:
    return 2.0 * (m + d + 3)


def calibrate(
    freqs_list,
    r_max: int,
    gamma: float,
    *,
    nu: float | None = None,
    m: float | None = None,
    c0_grid=None,
    zero_momentum_only: bool = False,
    budget: int = DEFAULT_BUDGET,
) -> tuple[float, float]:
    """Largest ``c0`` on a grid for which every given frequency set satisfies the bound.

    ``nu`` defaults to ``2 (m + d + 3)``. Returns ``(nu, c0)``.
    """
    if isinstance(freqs_list, Frequencies):
        freqs_list = [freqs_list]
    lat = freqs_list[0].lattice
    if nu is None:
        if m is None:
            raise ValueError("either nu or m is required")
        nu = default_nu(m, lat.d)
    if c0_grid is None:
        c0_grid = np.logspace(-4, 4, 161)
    c0_grid = np.sort(np.asarray(c0_grid, dtype=float))
    # per tuple the condition is c0 <= (|Omega| max(mu,1)^(nu r) / gamma)^(1/r)
    c0_max = math.inf
    for r in range(3, r_max + 1):
        table = enumerate_tuples(lat, r, budget=budget)
        keep = table.momentum_zero if zero_momentum_only else np.ones(len(table.mu), dtype=bool)
        log_mu = nu * r * np.log(_bound_mu(table.mu[keep]))
        for fr in freqs_list:
            om = np.abs(table_divisors(table, fr)[keep])
            if not len(om):
                continue
            with np.errstate(divide="ignore"):
                log_c = (np.log(om) + log_mu - math.log(gamma)) / r
            c0_max = min(c0_max, float(np.exp(np.min(log_c))))
    ok = c0_grid[c0_grid <= c0_max]
    if not len(ok):
        raise ValueError(f"no c0 on the grid satisfies the bound (need c0 <= {c0_max:g})")
    return float(nu), float(ok[-1])


def calibrate_nu(freqs_list, r_max: int, gamma: float, nu_grid, c0_floor: float, **kw) -> tuple[float, float]:
    """Smallest ``nu`` on a grid whose calibrated ``c0`` reaches ``c0_floor``."""
    for nu in sorted(nu_grid):
        try:
            nu_c, c0 = calibrate(freqs_list, r_max, gamma, nu=nu, **kw)
        except ValueError:
            continue
        if c0 >= c0_floor:
            return nu_c, c0
    raise ValueError("no nu on the grid reaches the requested c0 floor")


def smalldivisor_gap(freqs: Frequencies, j: MultiIndex, b: int, *, gamma: float = 1.0, C: float = 1.0, m: float | None = None) -> tuple[float, float]:
    """``|Omega(j) - b|`` and the lower bound ``C^r gamma / N(j)^(m + d + 3)``."""
    d = freqs.lattice.d
    if m is None:
        m = 2.0
    gap = abs(divisor(j, freqs) - b)
    bound = C ** len(j) * gamma / N_weight(j) ** (m + d + 3)
    return gap, bound


def check_extended(freqs: Frequencies, j: MultiIndex, l1, l2, eps1: int, eps2: int, gamma: float, C: float, alpha: float) -> tuple[float, float, bool]:
    """``|Omega(j) + eps1 omega_l1 + eps2 omega_l2|`` against ``C^r gamma^7 / N(j)^alpha``."""
    for e in (eps1, eps2):
        if e not in (-1, 0, 1):
            raise ValueError("eps must be in {-1, 0, 1}")
    combined = list(j)
    for l, e in ((l1, eps1), (l2, eps2)):
        if e:
            a = (int(l),) if isinstance(l, (int, np.integer)) else tuple(int(x) for x in l)
            combined.append(Index(a, e))
    if is_resonant(tuple(sorted(combined))):
        raise ValueError("combined tuple is resonant")
    # one correctly rounded sum, so swapping (l1, eps1) and (l2, eps2) is exact
    gap = abs(math.fsum([e.delta * freqs[e.a] for e in j] + [eps1 * freqs[l1] if eps1 else 0.0, eps2 * freqs[l2] if eps2 else 0.0]))
    bound = C ** len(j) * gamma ** 7 / N_weight(j) ** alpha
    return gap, bound, gap >= bound


def guard_violations(freqs: Frequencies, r_max: int) -> int:
    """Count tuples with ``|Omega(j)| > N(j)^2``.

    Tuples built only from the zero mode have ``|Omega| = r |v_0|`` against
    ``N(j)^2 = 1``, so they exceed the guard once ``r |v_0| > 1``.
    """
    bad = 0
    for r in range(1, r_max + 1):
        table = enumerate_tuples(freqs.lattice, r)
        om = np.abs(table_divisors(table, freqs))
        bad += int(np.sum(om > table.N ** 2))
    return bad


# -- Monte Carlo ---------------------------------------------------------------

def _trial(args) -> bool:
    m, R, lattice, gamma, nu, c0, r_max, seed, zm = args
    fr = frequencies(sample_potential(m, R, lattice, seed))
    rep = check_nonres(fr, r_max, gamma, nu, c0, zero_momentum_only=zm, max_violations=1)
    return not rep.ok


def n_workers() -> int:
    env = os.environ.get("NLSNF_THREADS")
    if env:
        return max(1, int(env))
    return 1


def trial_seeds(seed: int, trials: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1)[0]) for c in ss.spawn(trials)]


def measure_estimate(
    m: float,
    R: float,
    lattice: Lattice,
    gamma: float,
    nu: float,
    c0: float,
    r_max: int,
    trials: int,
    seed: int,
    *,
    zero_momentum_only: bool = False,
    workers: int | None = None,
) -> tuple[float, float]:
    """Fraction of sampled potentials violating the non-resonance bound, with binomial stderr."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    jobs = [(m, R, lattice, gamma, nu, c0, r_max, s, zero_momentum_only) for s in trial_seeds(seed, trials)]
    workers = workers or n_workers()
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            fails = sum(ex.map(_trial, jobs))
    else:
        fails = sum(map(_trial, jobs))
    p = fails / trials
    return p, math.sqrt(p * (1 - p) / trials)
