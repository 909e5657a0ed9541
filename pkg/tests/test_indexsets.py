import numpy as np
import pytest

from utils.errors import ConfigurationError
from utils.indexsets import (IndexFamily4, IndexSet, brute_force_compose, brute_force_extended_union,
                             brute_force_sum, build_E_alpha, compose_family, extended_union, iterate_family,
                             random_index_set)


CUTOFF = 6.0


def pairs(E):
    return {(z.real, k) for z, k in E.entries}


class TestIndexSet:

    def test_from_pairs_is_log_closed_and_sorted(self):
        E = IndexSet.from_pairs([(1.5, 2), (0.5, 0)], CUTOFF)
        assert pairs(E) == {(0.5, 0), (1.5, 0), (1.5, 1), (1.5, 2)}
        assert [z.real for z, _ in E.entries] == sorted(z.real for z, _ in E.entries)

    def test_entries_above_cutoff_are_dropped(self):
        E = IndexSet.from_pairs([(7.0, 0), (2.0, 0)], CUTOFF)
        assert pairs(E) == {(2.0, 0)}

    def test_cinf_step_closes_under_shift(self):
        E = IndexSet.from_pairs([(0.5, 1)], 3.0, cinf_step=True)
        assert E.contains(2.5, 1)
        assert not E.contains(3.5, 0)

    def test_negative_log_power_rejected(self):
        with pytest.raises(ConfigurationError):
            IndexSet.from_pairs([(1.0, -1)], CUTOFF)

    def test_extended_union_adds_log_at_common_exponent(self):
        E = IndexSet.from_pairs([(1.0, 0)], CUTOFF)
        F = IndexSet.from_pairs([(1.0, 1), (2.0, 0)], CUTOFF)
        G = extended_union(E, F)
        assert G.max_log_power(1.0) == 2
        assert G.max_log_power(2.0) == 0

    def test_extended_union_matches_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(500):
            E = random_index_set(rng, CUTOFF)
            F = random_index_set(rng, CUTOFF)
            assert E.extended_union(F).entries == brute_force_extended_union(E, F).entries

    def test_sum_matches_brute_force(self):
        rng = np.random.default_rng(5)
        for _ in range(500):
            E = random_index_set(rng, CUTOFF)
            F = random_index_set(rng, CUTOFF)
            assert (E + F).entries == brute_force_sum(E, F).entries

    def test_extended_union_is_commutative(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            E = random_index_set(rng, CUTOFF)
            F = random_index_set(rng, CUTOFF)
            assert E.extended_union(F).entries == F.extended_union(E).entries

    def test_sum_with_empty_is_empty(self):
        E = IndexSet.from_pairs([(1.0, 0)], CUTOFF)
        assert len(E + IndexSet.empty(CUTOFF)) == 0

    def test_sum_adds_exponents_and_logs(self):
        E = IndexSet.from_pairs([(0.5, 1)], CUTOFF)
        F = IndexSet.from_pairs([(1.0, 1)], CUTOFF)
        assert (E + F).max_log_power(1.5) == 2

    def test_cutoff_mismatch_raises(self):
        with pytest.raises(ConfigurationError):
            IndexSet.naturals(3.0).union(IndexSet.naturals(4.0))

    def test_text_round_trip(self):
        E = IndexSet.from_pairs([(0.5 + 1j, 1), (2.0, 0)], CUTOFF)
        assert IndexSet.from_text(E.to_text(), CUTOFF).entries == E.entries


class TestFamilies:

    def test_composition_formula(self):
        N0 = IndexSet.naturals(CUTOFF)
        E = IndexFamily4(lb=IndexSet.from_pairs([(1.0, 0)], CUTOFF), rb=N0, ff=N0, fi=N0)
        G = compose_family(E, E)
        expected_lb = E.lb.extended_union(E.ff + E.lb)
        assert G.lb.entries == expected_lb.entries
        assert G.fi.entries == (N0 + N0).entries

    def test_composition_matches_brute_force(self):
        rng = np.random.default_rng(13)
        for _ in range(300):
            sets = [random_index_set(rng, CUTOFF) for _ in range(8)]
            E = IndexFamily4(*sets[:3], fi=sets[3])
            F = IndexFamily4(*sets[4:7], fi=sets[7])
            composed, expected = compose_family(E, F), brute_force_compose(E, F)
            for face in ("lb", "rb", "ff", "fi"):
                assert composed.components()[face].entries == expected.components()[face].entries

    def test_missing_interior_set_propagates(self):
        N0 = IndexSet.naturals(CUTOFF)
        E = IndexFamily4(lb=N0, rb=N0, ff=N0)
        assert compose_family(E, E).fi is None

    def test_iterate_family_one_is_identity(self):
        N0 = IndexSet.naturals(CUTOFF)
        E = IndexFamily4(lb=N0, rb=N0, ff=N0, fi=N0)
        assert iterate_family(E, 1) is E
        with pytest.raises(ConfigurationError):
            iterate_family(E, 0)

    def test_build_E_alpha_from_poles(self):
        class Spectrum:
            poles = [(1.5j, 1, 0), (-1.5j, 1, 0)]

        family = build_E_alpha(Spectrum(), alpha=1.0, mu=2.0, cutoff=4.0)
        assert family.fi.entries == IndexSet.naturals(4.0).entries
        # sigma = -1.5i gives z = 1.5 - 2 on the + side, kept since -0.5 > alpha - mu = -1
        assert family.lb.contains(-0.5, 0)
        assert family.ff.contains(1.0, 0)
