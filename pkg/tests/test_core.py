import numpy as np
import pytest
from hypothesis import given, strategies as st

from immunegrid.core import (
    Action, AffinityTable, BindingSite, CellType, Condition, ConfigError,
    Mechanism, MoleculeType, complex_pattern, sample_random_binding_site,
    site_binds_target,
)


@pytest.fixture
def table():
    t = AffinityTable(8)
    t.add_pair(1, 2, 0.5, 0.5)
    return t


class TestAffinity:
    def test_membership(self, table):
        assert table.can_bind(1, 2)

    def test_symmetry_of_unordered_pairs(self, table):
        assert table.can_bind(2, 1)

    def test_non_membership(self, table):
        assert not table.can_bind(1, 3)

    def test_out_of_universe_is_error(self, table):
        with pytest.raises(ConfigError):
            table.can_bind(1, 8)
        with pytest.raises(ConfigError):
            table.add_pair(0, 99, 0.1, 0.1)

    def test_probability_range_enforced(self, table):
        with pytest.raises(ConfigError):
            table.add_pair(0, 1, 1.5, 0.0)

    def test_self_pair_allowed(self, table):
        table.add_pair(3, 3, 0.2, 0.1)
        assert table.can_bind(3, 3)

    @given(st.integers(0, 7), st.integers(0, 7))
    def test_symmetry_property(self, a, b):
        t = AffinityTable(8)
        t.add_pair(1, 2, 0.5, 0.5)
        t.add_pair(0, 5, 0.1, 0.9)
        t.add_pair(4, 4, 1.0, 0.0)
        assert t.can_bind(a, b) == t.can_bind(b, a)


class TestBindingSite:
    def test_both_pairs_bound(self, table):
        t = AffinityTable(16)
        t.add_pair(5, 10, 1, 1)
        t.add_pair(7, 11, 1, 1)
        assert site_binds_target(t, BindingSite((5, 7)), [10, 11])

    def test_one_pair_missing(self):
        t = AffinityTable(16)
        t.add_pair(5, 10, 1, 1)
        assert not site_binds_target(t, BindingSite((5, 7)), [10, 11])

    def test_single_epitope_site(self, table):
        assert site_binds_target(table, BindingSite((1,)), [2])

    def test_arity_mismatch(self, table):
        with pytest.raises(ValueError):
            site_binds_target(table, BindingSite((1, 2)), [2])

    def test_site_arity_bounds(self):
        with pytest.raises(ConfigError):
            BindingSite((1, 2, 3))
        with pytest.raises(ConfigError):
            BindingSite(())


class TestRandomSite:
    def test_deterministic_given_rng(self):
        a = sample_random_binding_site(np.random.default_rng(7), 16, 2)
        b = sample_random_binding_site(np.random.default_rng(7), 16, 2)
        assert a == b

    def test_forced_single(self):
        site = sample_random_binding_site(np.random.default_rng(0), 1, 1)
        assert site.epitopes == (0,)

    def test_empty_universe_is_error(self):
        with pytest.raises(ValueError):
            sample_random_binding_site(np.random.default_rng(0), 0, 1)

    def test_uniformity_chi_square(self):
        # independent draws should cover the universe uniformly
        from scipy.stats import chisquare
        rng = np.random.default_rng(123)
        u = 16
        draws = [sample_random_binding_site(rng, u, 2).epitopes
                 for _ in range(5000)]
        flat = np.array(draws).ravel()
        counts = np.bincount(flat, minlength=u)
        assert chisquare(counts).pvalue > 1e-4


class TestComplexPattern:
    def test_sorted_join(self):
        assert complex_pattern(["B", "C"]) == "B:C"

    def test_order_invariance(self):
        assert complex_pattern(["C", "B"]) == complex_pattern(["B", "C"])

    def test_single_member(self):
        assert complex_pattern(["D"]) == "D"

    def test_empty_is_error(self):
        with pytest.raises(ValueError):
            complex_pattern([])


class TestTypeValidation:
    def test_condition_threshold_minimum(self):
        with pytest.raises(ConfigError):
            Condition("surface_complex", pattern="A", threshold=0)

    def test_side_scoped_only_for_surface_kinds(self):
        with pytest.raises(ConfigError):
            Condition("contact_cell_type", labels=("X",), side_scoped=True)

    def test_unknown_condition_kind(self):
        with pytest.raises(ConfigError):
            Condition("telepathy", pattern="A")

    def test_action_argument_arity(self):
        with pytest.raises(ConfigError):
            Action("express")  # no molecule
        with pytest.raises(ConfigError):
            Action("differentiate")  # no cell type
        with pytest.raises(ConfigError):
            Action("secrete", molecule="X", count=0)

    def test_mechanism_needs_actions(self):
        with pytest.raises(ConfigError):
            Mechanism("m", actions=())

    def test_mechanism_prob_range(self):
        with pytest.raises(ConfigError):
            Mechanism("m", actions=(Action("divide"),), prob=0.0)

    def test_cell_size_fixed(self):
        with pytest.raises(ConfigError):
            CellType("X", size=2)

    def test_duplicate_mechanism_names(self):
        m = Mechanism("m", actions=(Action("divide"),))
        with pytest.raises(ConfigError):
            CellType("X", mechanisms=(m, m))

    def test_molecule_lifetime_positive(self):
        with pytest.raises(ConfigError):
            MoleculeType("X", mean_lifetime=0)

    def test_binding_site_index_range(self):
        with pytest.raises(ConfigError):
            MoleculeType("X", epitopes=(1,), binding_sites=(BindingSite((0, 1)),))

    def test_plain_type_detection(self):
        assert MoleculeType("X").is_plain
        assert not MoleculeType("Y", epitopes=(0,)).is_plain
        assert not MoleculeType("Z", clonal_epitopes=1).is_plain
