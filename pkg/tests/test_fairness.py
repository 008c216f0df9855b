from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from awpsp.fairness import (
    FairnessReport,
    RoundLossSample,
    avg_within_class_variance,
    fairness_report,
    gini,
    group_losses,
    kl_from_uniform,
    reports_to_csv,
    unseen_classes,
    var_of_class_means,
)


def two_pass_var(xs):
    m = sum(xs) / len(xs)
    return sum((x - m) ** 2 for x in xs) / len(xs)


def gini_oracle(counts):
    n = len(counts)
    total = sum(counts)
    return sum(abs(a - b) for a in counts for b in counts) / (2 * n * total)


def kl_oracle(counts, n_classes):
    total = sum(counts.values())
    return sum((v / total) * math.log((v / total) * n_classes) for v in counts.values() if v > 0)


class TestVariances:
    def test_examples(self):
        assert avg_within_class_variance({0: [2.0, 2.0], 1: [5.0]}) == 0.0
        assert avg_within_class_variance({0: [1.0, 3.0]}) == 1.0
        assert var_of_class_means({0: [1.0, 1.0], 1: [3.0]}) == 1.0
        assert var_of_class_means({0: [2.0], 1: [1.0, 3.0]}) == 0.0
        assert var_of_class_means({4: [7.0, 1.0]}) == 0.0

    def test_undefined(self):
        assert avg_within_class_variance({}) is None
        assert var_of_class_means({}) is None

    @settings(max_examples=1000)
    @given(st.dictionaries(st.integers(0, 9), st.lists(st.floats(0, 50), min_size=1, max_size=20), min_size=1))
    def test_matches_two_pass(self, groups):
        want_within = sum(two_pass_var(v) for v in groups.values()) / len(groups)
        want_means = two_pass_var([sum(v) / len(v) for v in groups.values()])
        assert avg_within_class_variance(groups) == pytest.approx(want_within, abs=1e-12, rel=1e-12)
        assert var_of_class_means(groups) == pytest.approx(want_means, abs=1e-12, rel=1e-12)
        assert avg_within_class_variance(groups) >= 0 and var_of_class_means(groups) >= 0
        relabeled = {k + 100: v for k, v in reversed(list(groups.items()))}
        assert var_of_class_means(relabeled) == pytest.approx(var_of_class_means(groups), abs=1e-12)

    def test_group_losses(self):
        g = group_losses([RoundLossSample(1, 0, 0.5), RoundLossSample(1, 2, 1.5), RoundLossSample(3, 0, 2.0)])
        assert {k: v.tolist() for k, v in g.items()} == {1: [0.5, 1.5], 3: [2.0]}
        with pytest.raises(ValueError):
            RoundLossSample(0, 0, float("nan"))


class TestKL:
    def test_examples(self):
        assert kl_from_uniform({c: 7 for c in range(10)}, 10) == 0.0
        assert kl_from_uniform({3: 12}, 10) == pytest.approx(2.302585092994046, abs=1e-12)
        assert kl_from_uniform({0: 6, 1: 4}, 2) == pytest.approx(0.020135513550688863, abs=1e-12)
        assert kl_from_uniform({}, 10) is None

    @settings(max_examples=1000)
    @given(st.integers(1, 12).flatmap(lambda n: st.tuples(st.just(n), st.lists(st.integers(0, 30), min_size=n, max_size=n))))
    def test_random(self, case):
        n, counts = case
        d = dict(enumerate(counts))
        v = kl_from_uniform(d, n)
        if sum(counts) == 0:
            assert v is None
            return
        assert v == pytest.approx(kl_oracle(d, n), abs=1e-12)
        assert v >= 0
        if len(set(counts)) == 1:
            assert v == pytest.approx(0.0, abs=1e-12)
        else:
            assert v > 0


class TestUnseen:
    def test_examples(self):
        assert unseen_classes({c: 1 for c in range(10)}, 10) == 0
        assert unseen_classes({}, 10) == 10
        counts = {c: (0 if c in (1, 4, 7) else 5) for c in range(10)}
        assert unseen_classes(counts, 10) == 3


class TestGini:
    def test_equal(self):
        assert gini([4, 4, 4]) == 0.0

    @pytest.mark.parametrize("n", range(2, 33))
    def test_one_takes_all(self, n):
        counts = [0] * n
        counts[n // 2] = 9
        assert gini(counts) == pytest.approx((n - 1) / n, abs=1e-15)

    def test_undefined_and_negative(self):
        assert gini([0, 0, 0]) is None
        with pytest.raises(ValueError):
            gini([1, -1])

    @settings(max_examples=1000)
    @given(st.lists(st.integers(0, 100), min_size=1, max_size=32), st.integers(1, 9), st.randoms(use_true_random=False))
    def test_brute_force_scale_permutation(self, counts, k, rnd):
        if sum(counts) == 0:
            return
        g = gini(counts)
        assert g == pytest.approx(gini_oracle(counts), abs=1e-12)
        assert 0.0 <= g < 1.0
        assert gini([k * c for c in counts]) == pytest.approx(g, abs=1e-12)
        shuffled = counts[:]
        rnd.shuffle(shuffled)
        assert gini(shuffled) == pytest.approx(g, abs=1e-12)


def test_report_and_csv():
    rep = fairness_report(4, {0: [1.0, 3.0], 2: [2.0]}, {0: 2, 2: 1}, 3, np.array([2, 0, 1]))
    assert isinstance(rep, FairnessReport)
    assert rep.unseen_class_count == 1
    assert rep.avg_within_class_var == pytest.approx(0.5)
    assert rep.var_of_class_means == 0.0
    assert rep.gini == pytest.approx(gini_oracle([2, 0, 1]))
    text = reports_to_csv([rep], "aw_psp")
    header, row = text.splitlines()
    assert header.startswith("round,policy")
    assert row.startswith("4,aw_psp")
    empty = fairness_report(0, {}, {}, 3, np.zeros(3))
    assert empty.kl_divergence is None and empty.gini is None and empty.unseen_class_count == 3
