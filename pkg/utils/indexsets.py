import logging
from dataclasses import dataclass, field
from itertools import product
from typing import Iterable, Optional

import numpy as np

from utils.errors import ConfigurationError

logger = logging.getLogger(__name__)

# Exponents are snapped to this many decimals so that z-equality in the
# extended union is exact for rational inputs and tolerant (1e-12) otherwise.
EXPONENT_DECIMALS = 12


def _snap(z) -> complex:
    z = complex(z)
    re = round(z.real, EXPONENT_DECIMALS) + 0.0
    im = round(z.imag, EXPONENT_DECIMALS) + 0.0
    return complex(re, im)


def _sort_key(entry):
    z, k = entry
    return (z.real, z.imag, k)


@dataclass(frozen=True)
class IndexSet:
    """
    Finite materialization of an index set: all (z, k) with Re z <= re_cutoff.
    Entries above the cutoff are implicit. When cinf_step is set the set is
    closed under z -> z + 1 up to the cutoff.
    """
    entries: tuple = ()
    re_cutoff: float = 6.0
    cinf_step: bool = False

    @classmethod
    def from_pairs(cls, pairs: Iterable, re_cutoff: float, cinf_step: bool = False) -> "IndexSet":
        """
        Build a canonical index set from raw (z, k) pairs.

        Pairs are log-closed downward, truncated at re_cutoff, optionally
        closed under z -> z + 1, deduplicated and sorted by (Re z, Im z, k).
        """
        collected = set()
        for z, k in pairs:
            z = _snap(z)
            k = int(k)
            if k < 0:
                raise ConfigurationError("log power must be nonnegative", z=z, k=k)
            if z.real > re_cutoff + 10 ** -EXPONENT_DECIMALS:
                continue
            for ell in range(k + 1):
                collected.add((z, ell))

        if cinf_step:
            for z, k in list(collected):
                shift = 1
                while z.real + shift <= re_cutoff + 10 ** -EXPONENT_DECIMALS:
                    collected.add((_snap(z + shift), k))
                    shift += 1

        return cls(entries=tuple(sorted(collected, key=_sort_key)), re_cutoff=re_cutoff,
                   cinf_step=cinf_step)

    @classmethod
    def empty(cls, re_cutoff: float) -> "IndexSet":
        return cls(entries=(), re_cutoff=re_cutoff, cinf_step=True)

    @classmethod
    def naturals(cls, re_cutoff: float, start: int = 0) -> "IndexSet":
        # start=0 gives N_0, start=1 gives N
        pairs = [(j, 0) for j in range(start, int(np.floor(re_cutoff)) + 1)]
        return cls.from_pairs(pairs, re_cutoff, cinf_step=True)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def contains(self, z, k: int = 0) -> bool:
        return (_snap(z), int(k)) in set(self.entries)

    def __contains__(self, item):
        z, k = item
        return self.contains(z, k)

    def max_log_power(self, z) -> int:
        """Largest k with (z, k) present, or -1 if z is absent."""
        z = _snap(z)
        powers = [k for w, k in self.entries if w == z]
        return max(powers) if powers else -1

    def exponents(self) -> list:
        seen = []
        for z, _ in self.entries:
            if z not in seen:
                seen.append(z)
        return seen

    def leading(self) -> Optional[complex]:
        return self.entries[0][0] if self.entries else None

    def _check_cutoff(self, other: "IndexSet"):
        if abs(self.re_cutoff - other.re_cutoff) > 1e-12:
            raise ConfigurationError("index sets carry different cutoffs",
                                     left=self.re_cutoff, right=other.re_cutoff)

    def union(self, other: "IndexSet") -> "IndexSet":
        self._check_cutoff(other)
        return IndexSet.from_pairs(self.entries + other.entries, self.re_cutoff,
                                   cinf_step=self.cinf_step and other.cinf_step)

    def extended_union(self, other: "IndexSet") -> "IndexSet":
        """E u F u {(z, k + l + 1) : (z, k) in E, (z, l) in F}."""
        self._check_cutoff(other)
        pairs = list(self.entries) + list(other.entries)
        other_powers = {}
        for z, ell in other.entries:
            other_powers[z] = max(other_powers.get(z, -1), ell)
        for z, k in self.entries:
            if z in other_powers:
                pairs.append((z, k + other_powers[z] + 1))
        return IndexSet.from_pairs(pairs, self.re_cutoff,
                                   cinf_step=self.cinf_step and other.cinf_step)

    def __add__(self, other: "IndexSet") -> "IndexSet":
        """Pairwise sums {(z + w, k + l)}; an empty operand gives the empty set."""
        self._check_cutoff(other)
        if not self.entries or not other.entries:
            return IndexSet.empty(self.re_cutoff)
        pairs = [(z + w, k + ell) for (z, k), (w, ell) in product(self.entries, other.entries)]
        return IndexSet.from_pairs(pairs, self.re_cutoff,
                                   cinf_step=self.cinf_step and other.cinf_step)

    def shift(self, c) -> "IndexSet":
        return IndexSet.from_pairs([(z + c, k) for z, k in self.entries], self.re_cutoff,
                                   cinf_step=self.cinf_step)

    def close_cinf(self) -> "IndexSet":
        return IndexSet.from_pairs(self.entries, self.re_cutoff, cinf_step=True)

    def to_text(self) -> str:
        return "\n".join(f"{z.real!r}, {z.imag!r}, {k}" for z, k in self.entries)

    @classmethod
    def from_text(cls, text: str, re_cutoff: float, cinf_step: bool = False) -> "IndexSet":
        pairs = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            re, im, k = (part.strip() for part in line.split(","))
            pairs.append((complex(float(re), float(im)), int(k)))
        return cls.from_pairs(pairs, re_cutoff, cinf_step=cinf_step)


def extended_union(E: IndexSet, F: IndexSet) -> IndexSet:
    return E.extended_union(F)


@dataclass(frozen=True)
class IndexFamily4:
    """Index sets attached to the faces lb, rb, ff and fi (fi optional)."""
    lb: IndexSet
    rb: IndexSet
    ff: IndexSet
    fi: Optional[IndexSet] = None

    def components(self) -> dict:
        return {"lb": self.lb, "rb": self.rb, "ff": self.ff, "fi": self.fi}


def compose_family(E: IndexFamily4, F: IndexFamily4) -> IndexFamily4:
    """
    Index family of a composition:
        G_lb = E_lb ext (E_ff + F_lb)
        G_rb = (E_rb + F_ff) ext F_rb
        G_ff = (E_ff + F_ff) ext (E_lb + F_rb)
        G_fi = E_fi + F_fi
    """
    g_lb = E.lb.extended_union(E.ff + F.lb)
    g_rb = (E.rb + F.ff).extended_union(F.rb)
    g_ff = (E.ff + F.ff).extended_union(E.lb + F.rb)
    if E.fi is None or F.fi is None:
        g_fi = None
    else:
        g_fi = E.fi + F.fi
    return IndexFamily4(lb=g_lb, rb=g_rb, ff=g_ff, fi=g_fi)


def iterate_family(E: IndexFamily4, N: int) -> IndexFamily4:
    """N-fold composition E o E o ... o E (the family of the N-th resolvent power)."""
    if N < 1:
        raise ConfigurationError("iteration count must be positive", N=N)
    result = E
    for _ in range(N - 1):
        result = compose_family(result, E)
    return result


def _pole_orders(spec) -> dict:
    """Distinct poles with their order; modes sharing a pole keep the largest order."""
    orders = {}
    for sigma, order, _mode in spec.poles:
        key = _snap(sigma)
        orders[key] = max(orders.get(key, 0), int(order))
    return orders


def _order_at(orders: dict, sigma) -> int:
    return orders.get(_snap(sigma), 0)


def _hat_set(orders: dict, alpha: float, mu: float, cutoff: float, sign: int) -> IndexSet:
    # sigma-convention: tau = sigma + i mu, z = i sigma - mu (sign=+1) or -i sigma + mu (sign=-1)
    pairs = []
    for sigma in orders:
        if sign > 0:
            z = 1j * sigma - mu
        else:
            z = -1j * sigma + mu
        if not z.real > sign * (alpha - mu):
            continue
        r = 0
        while z.real + r <= cutoff + 10 ** -EXPONENT_DECIMALS:
            ceiling = sum(_order_at(orders, sigma - sign * 1j * ell) for ell in range(r + 1))
            for k in range(ceiling):
                pairs.append((z + r, k))
            r += 1
    return IndexSet.from_pairs(pairs, cutoff, cinf_step=True)


def build_E_alpha(spec, alpha: float, mu: float, cutoff: float) -> IndexFamily4:
    """
    Resolvent index family (E-check+, E-check-, E, N_0) from a boundary spectrum.

    Parameters:
    - spec: BoundarySpectrum -> poles (sigma, ord, mode) in the x^{i sigma} convention
    - alpha: float -> weight; the weight line is Im sigma = -alpha
    - mu: float -> weight order of the cone operator
    - cutoff: float -> real-part truncation of every component
    """
    orders = _pole_orders(spec)
    hat_plus = _hat_set(orders, alpha, mu, cutoff, sign=+1)
    hat_minus = _hat_set(orders, alpha, mu, cutoff, sign=-1)
    logger.info("E(alpha): %d poles, |E+|=%d, |E-|=%d", len(orders), len(hat_plus), len(hat_minus))

    check_plus = hat_plus.extended_union(hat_plus)
    check_minus = hat_minus.extended_union(hat_minus)
    e_ff = IndexSet.naturals(cutoff, start=1).extended_union(hat_plus + hat_minus)
    return IndexFamily4(lb=check_plus, rb=check_minus, ff=e_ff, fi=IndexSet.naturals(cutoff))


def brute_force_extended_union(E: IndexSet, F: IndexSet) -> IndexSet:
    """Literal enumeration of the defining formula, used as a test oracle."""
    pairs = set(E.entries) | set(F.entries)
    for (z, k) in E.entries:
        for (w, ell) in F.entries:
            if z == w:
                pairs.add((z, k + ell + 1))
    return IndexSet.from_pairs(pairs, E.re_cutoff)


def brute_force_sum(E: IndexSet, F: IndexSet) -> IndexSet:
    """Literal {(z + w, k + l)} up to the cutoff, used as a test oracle."""
    pairs = set()
    for (z, k) in E.entries:
        for (w, ell) in F.entries:
            total = _snap(z + w)
            if total.real <= E.re_cutoff + 10 ** -EXPONENT_DECIMALS:
                pairs.add((total, k + ell))
    return IndexSet(entries=tuple(sorted(pairs, key=_sort_key)), re_cutoff=E.re_cutoff)


def brute_force_compose(E: IndexFamily4, F: IndexFamily4) -> IndexFamily4:
    """Composition family from the literal sum and extended-union enumerations."""
    fi = None if E.fi is None or F.fi is None else brute_force_sum(E.fi, F.fi)
    return IndexFamily4(lb=brute_force_extended_union(E.lb, brute_force_sum(E.ff, F.lb)),
                        rb=brute_force_extended_union(brute_force_sum(E.rb, F.ff), F.rb),
                        ff=brute_force_extended_union(brute_force_sum(E.ff, F.ff), brute_force_sum(E.lb, F.rb)),
                        fi=fi)


def random_index_set(rng: np.random.Generator, cutoff: float, max_entries: int = 4) -> IndexSet:
    """Random index set with half-integer exponents in [0, cutoff] and log powers <= 2."""
    count = int(rng.integers(0, max_entries + 1))
    grid = np.arange(0.0, cutoff + 0.25, 0.5)
    pairs = [(float(rng.choice(grid)), int(rng.integers(0, 3))) for _ in range(count)]
    return IndexSet.from_pairs(pairs, cutoff)
