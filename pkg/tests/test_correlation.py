from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from awpsp.correlation import (
    CorrelationState,
    ProximityWeights,
    adjusted_availability,
    neighbor_mask_from_pairs,
)


def state(corr, alpha=0.5, tau=0.5):
    return CorrelationState(np.asarray(corr, dtype=float), alpha=alpha, tau_corr=tau)


def pair_corr(n, i, j, v):
    m = np.eye(n)
    m[i, j] = m[j, i] = v
    return m


class TestRecord:
    def test_empty_round(self):
        s = state(np.eye(3))
        s.record_round_failures([], {(0, 1)})
        assert s.rounds_elapsed == 1 and s.cofail_rounds.sum() == 0

    def test_neighbour_pair(self):
        s = state(np.eye(3))
        s.record_round_failures({1, 2}, {(1, 2)})
        assert s.cofail_rounds[1, 2] == s.cofail_rounds[2, 1] == 1
        assert s.cofail_rounds[0].sum() == 0

    def test_non_neighbours_not_counted(self):
        s = state(np.eye(3))
        s.record_round_failures({0, 1, 2}, {(1, 2)})
        assert s.cofail_rounds[0, 1] == 0

    def test_replay_matches_recount(self):
        rng = np.random.default_rng(5)
        n = 8
        pairs = {(int(a), int(b)) for a, b in rng.integers(0, n, (12, 2)) if a != b}
        s = state(np.eye(n))
        log = []
        for _ in range(50):
            failed = {int(k) for k in np.flatnonzero(rng.random(n) < 0.3)}
            log.append(failed)
            s.record_round_failures(failed, pairs)
        adj = {frozenset(p) for p in pairs}
        for i in range(n):
            for j in range(n):
                want = sum(1 for f in log if i != j and frozenset((i, j)) in adj and i in f and j in f)
                assert s.cofail_rounds[i, j] == want
        assert s.rounds_elapsed == 50
        assert np.all(s.cofail_rounds <= s.rounds_elapsed)


class TestGamma:
    def test_pure_trace(self):
        assert state(pair_corr(2, 0, 1, 0.8), alpha=1.0).gamma(0, 1) == pytest.approx(0.8)

    def test_pure_fail(self):
        s = state(pair_corr(2, 0, 1, 0.9), alpha=0.0)
        for r in range(10):
            s.record_round_failures({0, 1} if r < 3 else set(), {(0, 1)})
        assert s.gamma(0, 1) == pytest.approx(0.3)

    def test_blend(self):
        s = state(pair_corr(2, 0, 1, 0.6), alpha=0.5)
        for r in range(5):
            s.record_round_failures({0, 1} if r == 0 else set(), {(0, 1)})
        assert s.gamma(0, 1) == pytest.approx(0.4)

    def test_negative_trace_clamped(self):
        assert state(pair_corr(2, 0, 1, -0.7), alpha=1.0).gamma(0, 1) == 0.0

    def test_diagonal_rejected(self):
        with pytest.raises(ValueError):
            state(np.eye(2)).gamma(1, 1)

    def test_validation(self):
        with pytest.raises(ValueError):
            state(np.array([[1, 0.2], [0.3, 1]]))
        with pytest.raises(ValueError):
            state(np.eye(2), alpha=1.5)

    @settings(max_examples=100)
    @given(st.integers(2, 10), st.floats(0, 1), st.integers(0, 2**31))
    def test_matrix_matches_scalar_and_is_symmetric(self, n, alpha, seed):
        rng = np.random.default_rng(seed)
        raw = rng.uniform(-1, 1, (n, n))
        corr = (raw + raw.T) / 2
        np.fill_diagonal(corr, 1.0)
        s = state(corr, alpha=alpha)
        mask = rng.random((n, n)) < 0.5
        mask = mask | mask.T
        for _ in range(int(rng.integers(0, 15))):
            s.record_round_failures(np.flatnonzero(rng.random(n) < 0.4).tolist(), mask)
        g = s.gamma_matrix()
        assert np.allclose(g, g.T)
        assert np.all((g >= 0) & (g <= 1))
        for i in range(n):
            for j in range(n):
                if i != j:
                    assert g[i, j] == pytest.approx(s.gamma(i, j), abs=1e-12)

    def test_boundaries(self):
        rng = np.random.default_rng(0)
        raw = rng.uniform(-1, 1, (6, 6))
        corr = (raw + raw.T) / 2
        np.fill_diagonal(corr, 1.0)
        s1 = state(corr, alpha=1.0)
        expected = np.clip(corr, 0, 1)
        np.fill_diagonal(expected, 0)
        assert np.array_equal(s1.gamma_matrix(), expected)
        s0 = state(corr, alpha=0.0)
        full = np.ones((6, 6), dtype=bool)
        s0.record_round_failures([0, 1, 2], full)
        s0.record_round_failures([1, 2], full)
        assert s0.gamma(1, 2) == 1.0 and s0.gamma(0, 1) == 0.5 and s0.gamma(3, 4) == 0.0

    @given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 1))
    def test_monotone_in_trace(self, a, b, alpha):
        lo, hi = sorted((a, b))
        assert state(pair_corr(2, 0, 1, lo), alpha).gamma(0, 1) <= state(pair_corr(2, 0, 1, hi), alpha).gamma(0, 1) + 1e-15


class TestGroup:
    def test_tau_one_is_empty(self):
        s = state(np.ones((4, 4)), alpha=1.0, tau=1.0)
        assert all(s.correlated_group(i) == set() for i in range(4))

    def test_tau_zero_includes_positive(self):
        s = state(pair_corr(3, 0, 2, 0.01), alpha=1.0, tau=0.0)
        assert s.correlated_group(0) == {2}

    def test_hand_set_five_nodes(self):
        corr = np.eye(5)
        for (i, j), v in {(0, 1): 0.9, (0, 2): 0.5, (0, 3): 0.51, (1, 4): 0.7, (2, 3): 0.2}.items():
            corr[i, j] = corr[j, i] = v
        s = state(corr, alpha=1.0, tau=0.5)
        mask = s.group_mask()
        for i in range(5):
            scan = {j for j in range(5) if j != i and corr[i, j] > 0.5}
            assert s.correlated_group(i) == scan
            assert set(np.flatnonzero(mask[i]).tolist()) == scan
        assert s.correlated_group(0) == {1, 3}


class TestPenalty:
    def test_empty_group(self):
        s = state(np.eye(3), alpha=1.0)
        assert s.penalty(ProximityWeights(np.ones((3, 3))), 0) == (0.0, 0.0)

    def test_single_term(self):
        s = state(pair_corr(2, 0, 1, 0.6), alpha=1.0, tau=0.5)
        w = ProximityWeights(np.full((2, 2), 0.5))
        raw, clamped = s.penalty(w, 0)
        assert raw == pytest.approx(0.3) and clamped == pytest.approx(0.3)

    def test_clamp(self):
        corr = np.full((3, 3), 0.7)
        np.fill_diagonal(corr, 1.0)
        s = state(corr, alpha=1.0, tau=0.5)
        raw, clamped = s.penalty(ProximityWeights(np.ones((3, 3))), 0)
        assert raw == pytest.approx(1.4) and clamped == 1.0

    @settings(max_examples=50)
    @given(st.integers(2, 12), st.integers(0, 2**31))
    def test_vectorized_matches_scalar(self, n, seed):
        rng = np.random.default_rng(seed)
        raw = rng.uniform(0, 1, (n, n))
        corr = (raw + raw.T) / 2
        np.fill_diagonal(corr, 1.0)
        s = state(corr, alpha=0.7, tau=0.4)
        wv = rng.random((n, n))
        w = ProximityWeights((wv + wv.T) / 2)
        raw_v, cl_v = s.penalties(w)
        for i in range(n):
            r, c = s.penalty(w, i)
            assert raw_v[i] == pytest.approx(r, abs=1e-12)
            assert 0.0 <= cl_v[i] <= 1.0

    def test_export_csv(self):
        s = state(pair_corr(2, 0, 1, 0.6), alpha=1.0)
        text = s.export_csv(ProximityWeights(np.full((2, 2), 0.5)))
        assert text.splitlines() == ["node,0,1,rho_raw,rho", "0,0,0.6,0.3,0.3", "1,0.6,0,0.3,0.3"]


class TestWeights:
    def test_from_rtt(self):
        rtt = np.array([[0, 50, 300], [50, 0, 100], [300, 100, 0]], dtype=float)
        w = ProximityWeights.from_rtt(rtt, 200.0)
        assert w[0, 1] == 0.75 and w[1, 2] == 0.5 and w[0, 2] == 0.0 and w[0, 0] == 0.0

    def test_neighbour_mask_zeroes(self):
        rtt = np.full((3, 3), 20.0)
        mask = neighbor_mask_from_pairs(3, [(0, 1)])
        w = ProximityWeights.from_rtt(rtt, 200.0, mask)
        assert w[0, 1] == pytest.approx(0.9) and w[1, 2] == 0.0

    def test_invalid(self):
        with pytest.raises(ValueError):
            ProximityWeights(np.array([[0, 0.2], [0.3, 0]]))
        with pytest.raises(ValueError):
            ProximityWeights(np.array([[0, 1.2], [1.2, 0]]))
        with pytest.raises(ValueError):
            ProximityWeights.from_rtt(np.zeros((2, 2)), 0.0)


@pytest.mark.parametrize("a,rho,expected", [(0.8, 0.0, 0.8), (0.8, 1.0, 0.0), (0.8, 0.25, 0.6)])
def test_adjusted(a, rho, expected):
    assert adjusted_availability(a, rho) == pytest.approx(expected, abs=1e-12)


@given(st.floats(0, 1), st.floats(0, 1))
def test_adjusted_in_range(a, rho):
    assert 0.0 <= adjusted_availability(a, rho) <= 1.0
