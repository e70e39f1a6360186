import numpy as np
import pytest

from covbalance import CovariateSet, Partition, balanced_sizes
from covbalance.errors import ConfigError, DimensionMismatchError


class TestCovariateSet:
    def test_from_values_generates_ids(self):
        cs = CovariateSet.from_values([[1.0, 2.0], [3.0, 4.0]])
        assert cs.unit_ids == ("u0", "u1")
        assert cs.n == 2 and cs.p == 2

    def test_rejects_duplicate_ids(self):
        with pytest.raises(ConfigError, match="unique"):
            CovariateSet(("a", "a"), np.zeros((2, 1)))

    def test_rejects_non_finite(self):
        with pytest.raises(ConfigError, match="row 1, column 0"):
            CovariateSet.from_values([[0.0], [np.nan]])

    def test_rejects_id_count_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            CovariateSet(("a",), np.zeros((2, 1)))

    def test_values_are_immutable(self):
        cs = CovariateSet.from_values([[1.0], [2.0]])
        with pytest.raises(ValueError):
            cs.values[0, 0] = 9.0

    def test_concat_checks_id_collisions(self):
        a = CovariateSet.from_values([[1.0]], unit_ids=("x",))
        b = CovariateSet.from_values([[2.0]], unit_ids=("x",))
        with pytest.raises(ConfigError, match="duplicate"):
            a.concat(b)

    def test_concat_with_empty(self):
        a = CovariateSet.from_values([[1.0], [2.0]])
        empty = CovariateSet((), np.zeros((0, 1)))
        assert a.concat(empty) is a
        assert empty.concat(a) is a

    def test_select_keeps_ids(self):
        cs = CovariateSet.from_values([[1.0], [2.0], [3.0]])
        sub = cs.select([2, 0])
        assert sub.unit_ids == ("u2", "u0")
        assert sub.values[:, 0].tolist() == [3.0, 1.0]


class TestPartition:
    def test_sizes_and_members(self):
        part = Partition(np.array([1, 2, 1, 2, 2]), 2)
        assert part.sizes == (2, 3)
        members = part.members()
        assert members[0].tolist() == [0, 2]
        assert members[1].tolist() == [1, 3, 4]

    def test_members_ascending_for_any_labeling(self, rng):
        for _ in range(20):
            part = Partition.random_balanced(17, 3, rng)
            for idx in part.members():
                assert np.all(np.diff(idx) > 0)
            assert sorted(np.concatenate(part.members()).tolist()) == list(range(17))

    def test_rejects_empty_group(self):
        with pytest.raises(ConfigError, match="empty group"):
            Partition(np.array([1, 1, 1]), 2)

    def test_rejects_out_of_range_labels(self):
        with pytest.raises(ConfigError):
            Partition(np.array([0, 1]), 2)

    def test_relabeled_permutes_groups(self):
        part = Partition(np.array([1, 2, 3]), 3)
        swapped = part.relabeled({1: 3, 2: 2, 3: 1})
        assert swapped.groups.tolist() == [3, 2, 1]
        with pytest.raises(ConfigError):
            part.relabeled({1: 1, 2: 1, 3: 3})

    def test_from_sizes_order_round_trip(self, rng):
        part = Partition.random_balanced(12, 3, rng)
        from covbalance import encode_permutation

        decoded = Partition.from_sizes_order(encode_permutation(part), part.sizes)
        assert np.array_equal(decoded.groups, part.groups)

    def test_from_sizes_order_rejects_non_permutation(self):
        with pytest.raises(ConfigError, match="permutation"):
            Partition.from_sizes_order(np.array([0, 0, 1, 2]), (2, 2))

    def test_random_balanced_is_balanced(self, rng):
        part = Partition.random_balanced(11, 3, rng)
        assert sorted(part.sizes) == [3, 4, 4]
        assert part.is_balanced


def test_balanced_sizes():
    assert balanced_sizes(10, 2) == (5, 5)
    assert balanced_sizes(11, 3) == (4, 4, 3)
    with pytest.raises(ConfigError):
        balanced_sizes(2, 3)
