from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from awpsp.failure_injection import (
    FailureConfig,
    FailureMode,
    TelemetryProfile,
    failure_log_line,
    inject_correlated,
    inject_independent,
    inject_telemetry_noise,
    telemetry_noise_arrays,
)
from awpsp.overlay import NodeMetadata, OverlayConfig, detect_failure


def closure_oracle(n, corr, c, seeds):
    """Union-find over the thresholded graph."""
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(n):
        for j in range(i + 1, n):
            if corr[i, j] > c:
                parent[find(i)] = find(j)
    roots = {find(s) for s in seeds}
    return {k for k in range(n) if find(k) in roots}


def random_corr(rng, n):
    raw = rng.uniform(-1, 1, (n, n))
    corr = (raw + raw.T) / 2
    np.fill_diagonal(corr, 1.0)
    return corr


class TestIndependent:
    def test_extremes(self):
        rng = np.random.default_rng(0)
        assert inject_independent(range(10), 0.0, rng) == frozenset()
        assert inject_independent(range(10), 1.0, rng) == frozenset(range(10))

    def test_mean_count(self):
        rng = np.random.default_rng(1)
        counts = [len(inject_independent(range(10), 0.3, rng)) for _ in range(10_000)]
        assert np.mean(counts) == pytest.approx(3.0, abs=0.1)

    def test_reproducible(self):
        a = [inject_independent(range(50), 0.4, np.random.default_rng(7)) for _ in range(2)]
        assert a[0] == a[1]

    def test_invalid(self):
        with pytest.raises(ValueError):
            inject_independent([1], 1.5, np.random.default_rng(0))


class TestCorrelated:
    def test_whole_group_just_below_min(self):
        rng = np.random.default_rng(2)
        corr = np.eye(8)
        block = rng.uniform(0.45, 0.9, (5, 5))
        corr[:5, :5] = (block + block.T) / 2
        np.fill_diagonal(corr, 1.0)
        c = corr[:5, :5][np.triu_indices(5, 1)].min() - 1e-9
        assert inject_correlated(range(8), corr, c, {3}) == frozenset(range(5))

    def test_threshold_one_is_seed_only(self):
        corr = np.ones((5, 5))
        assert inject_correlated(range(5), corr, 1.0, {1, 4}) == frozenset({1, 4})

    def test_seed_outside_nodes_ignored(self):
        assert inject_correlated([0, 1], np.ones((3, 3)), 0.5, {2}) == frozenset()

    @settings(max_examples=200)
    @given(st.integers(1, 64), st.floats(0, 1), st.integers(0, 2**31))
    def test_matches_union_find(self, n, c, seed):
        rng = np.random.default_rng(seed)
        corr = random_corr(rng, n)
        seeds = set(rng.choice(n, size=int(rng.integers(0, min(n, 4) + 1)), replace=False).tolist())
        assert set(inject_correlated(range(n), corr, c, seeds)) == closure_oracle(n, corr, c, seeds)

    @settings(max_examples=200)
    @given(st.integers(2, 30), st.floats(0, 1), st.floats(0, 1), st.integers(0, 2**31))
    def test_monotone_in_threshold(self, n, c1, c2, seed):
        lo, hi = sorted((c1, c2))
        rng = np.random.default_rng(seed)
        corr = random_corr(rng, n)
        seeds = {int(rng.integers(0, n))}
        assert inject_correlated(range(n), corr, lo, seeds) >= inject_correlated(range(n), corr, hi, seeds)

    def test_invalid(self):
        with pytest.raises(ValueError):
            inject_correlated([0], np.eye(1), -0.1, set())


class TestTelemetry:
    def metas(self, n):
        return [NodeMetadata(i, 20.0, 0.05) for i in range(n)]

    def test_zero_profile_identity(self):
        m = self.metas(5)
        assert inject_telemetry_noise(m, 0, TelemetryProfile(), np.random.default_rng(0)) == m

    def test_forced_spike_trips_detector(self):
        prof = TelemetryProfile(spike_prob=1.0, spike_latency_ms=200.0)
        out = inject_telemetry_noise(self.metas(20), 0, prof, np.random.default_rng(0))
        assert all(detect_failure(m, OverlayConfig()) for m in out)

    def test_spike_rate(self):
        prof = TelemetryProfile(spike_prob=0.2)
        rng = np.random.default_rng(4)
        rates = [telemetry_noise_arrays(np.zeros(1), np.zeros(1), prof, rng)[2][0] for _ in range(1000)]
        assert np.mean(rates) == pytest.approx(0.2, abs=0.02)

    def test_deterministic_and_bounded(self):
        prof = TelemetryProfile(latency_jitter_ms=50.0, loss_jitter=0.5, spike_prob=0.3, spike_loss=0.9)
        a = telemetry_noise_arrays(np.full(100, 5.0), np.full(100, 0.5), prof, np.random.default_rng(9))
        b = telemetry_noise_arrays(np.full(100, 5.0), np.full(100, 0.5), prof, np.random.default_rng(9))
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert np.all(a[0] >= 0) and np.all((a[1] >= 0) & (a[1] <= 1))

    def test_profile_validation(self):
        with pytest.raises(ValueError):
            TelemetryProfile(spike_prob=2.0)
        with pytest.raises(ValueError):
            TelemetryProfile(baseline_loss=-0.1)


def test_config_and_log():
    cfg = FailureConfig(mode="correlated", c_threshold=0.4)
    assert cfg.mode is FailureMode.CORRELATED
    with pytest.raises(ValueError):
        FailureConfig(p_f=1.2)
    with pytest.raises(ValueError):
        FailureConfig(mode="bogus")
    rec = json.loads(failure_log_line(3, "independent_prob", {5, 1}))
    assert rec == {"round": 3, "mode": "independent_prob", "failed_ids": [1, 5]}
