"""Monte Carlo checks of the selection model's analytic guarantees.

Every check takes an explicit ``numpy.random.Generator`` and returns a small
result record carrying the measured quantity, the analytic target and the
tolerance used (``K_SIGMA`` Monte Carlo standard errors).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "K_SIGMA",
    "DependentBernoulliPair",
    "FrechetResult",
    "HazardResult",
    "ThresholdResult",
    "ConsistencyScenario",
    "ConsistencyResult",
    "QuadraticFLProblem",
    "ConvergenceResult",
    "check_frechet_bound",
    "check_hazard_recovery",
    "check_threshold_optimality",
    "check_consistency_bound",
    "check_convergence_bound",
    "random_pair",
    "random_scenario",
    "two_client_problem",
    "split_distortion",
]

K_SIGMA = 3.0


# ---------------------------------------------------------------------------
# Dependent Bernoulli pairs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DependentBernoulliPair:
    """Two Bernoulli variables with fixed marginals and tunable dependence.

    ``dependence`` in [0, 1] moves the joint success mass linearly from the
    independent value ``a_c * a_b`` to the upper Frechet-Hoeffding bound
    ``min(a_c, a_b)``; values in [-1, 0] move it toward the lower bound
    ``max(0, a_c + a_b - 1)``.
    """

    marginal_c: float
    marginal_b: float
    dependence: float = 0.0

    def __post_init__(self):
        for name in ("marginal_c", "marginal_b"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not -1.0 <= self.dependence <= 1.0:
            raise ValueError("dependence must lie in [-1, 1]")

    @property
    def independent_joint(self) -> float:
        return self.marginal_c * self.marginal_b

    @property
    def lower(self) -> float:
        return max(0.0, self.marginal_c + self.marginal_b - 1.0)

    @property
    def upper(self) -> float:
        return min(self.marginal_c, self.marginal_b)

    @property
    def p11(self) -> float:
        ind = self.independent_joint
        d = self.dependence
        if d >= 0:
            return ind + d * (self.upper - ind)
        return ind + d * (ind - self.lower)

    @property
    def kappa(self) -> float:
        """Exact factorization error ``|P(both) - a_c a_b|``."""
        return abs(self.p11 - self.independent_joint)

    def joint(self) -> np.ndarray:
        """Probabilities of (1,1), (1,0), (0,1), (0,0)."""
        p11 = self.p11
        p10 = self.marginal_c - p11
        p01 = self.marginal_b - p11
        p00 = 1.0 - p11 - p10 - p01
        return np.clip(np.array([p11, p10, p01, p00]), 0.0, 1.0)

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        u = rng.random(n)
        cum = np.cumsum(self.joint())
        cell = np.searchsorted(cum, u, side="right")
        cell = np.minimum(cell, 3)
        c = (cell == 0) | (cell == 1)
        b = (cell == 0) | (cell == 2)
        return c, b


def random_pair(rng: np.random.Generator, positive_only: bool = False) -> DependentBernoulliPair:
    lo = 0.0 if positive_only else -1.0
    a_c, a_b = rng.random(2)
    return DependentBernoulliPair(float(a_c), float(a_b), float(rng.uniform(lo, 1.0)))


@dataclass(frozen=True)
class FrechetResult:
    empirical_delta: float
    bound: float
    holds: bool
    sigma: float
    sharp_bound: float
    holds_sharp: bool
    p_hat: float


def check_frechet_bound(
    pair: DependentBernoulliPair, n_samples: int, rng: np.random.Generator
) -> FrechetResult:
    """Compare the empirical factorization error with ``min(a,b) - ab``.

    ``sharp_bound`` is the two-sided Frechet-Hoeffding envelope
    ``max(min(a,b) - ab, ab - max(0, a+b-1))``, reported for reference since
    the one-sided form is exceeded by some negatively dependent pairs.
    """
    c, b = pair.sample(n_samples, rng)
    p_hat = float(np.mean(c & b))
    sigma = math.sqrt(max(p_hat * (1.0 - p_hat), 0.0) / n_samples)
    ab = pair.independent_joint
    delta = abs(p_hat - ab)
    bound = pair.upper - ab + K_SIGMA * sigma
    sharp = max(pair.upper - ab, ab - pair.lower) + K_SIGMA * sigma
    return FrechetResult(delta, bound, delta <= bound, sigma, sharp, delta <= sharp, p_hat)


# ---------------------------------------------------------------------------
# Hazard recovery
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HazardResult:
    empirical_beta: float
    analytic_beta: float
    gap: float
    sigma: float
    holds: bool


def check_hazard_recovery(
    lambda_: float, delta_t: float, n_samples: int, rng: np.random.Generator
) -> HazardResult:
    """Exponential recovery times: P(T <= delta_t) against ``1 - exp(-lambda delta_t)``."""
    if lambda_ <= 0 or delta_t <= 0:
        raise ValueError("lambda and delta_t must be positive")
    times = rng.exponential(1.0 / lambda_, size=n_samples)
    emp = float(np.mean(times <= delta_t))
    analytic = -math.expm1(-lambda_ * delta_t)
    sigma = math.sqrt(analytic * (1.0 - analytic) / n_samples)
    gap = abs(emp - analytic)
    # at the degenerate limits sigma vanishes; one sample of slack keeps the check meaningful
    tol = max(K_SIGMA * sigma, 1.0 / n_samples)
    return HazardResult(emp, analytic, gap, sigma, gap <= tol)


# ---------------------------------------------------------------------------
# Threshold rule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThresholdResult:
    exact_loss: float
    perturbed: dict[float, float]
    mass_between: dict[float, float]
    holds: bool


def check_threshold_optimality(
    resource_distribution: Callable[[np.random.Generator, int], np.ndarray],
    c_min: float,
    n_samples: int,
    rng: np.random.Generator,
    perturbations: Sequence[float] = (-0.1, 0.1),
) -> ThresholdResult:
    """The rule ``1{C >= c_min}`` has zero 0-1 loss against its own label.

    A shifted threshold ``c_min + eps`` must have positive loss exactly when
    the sample places mass in the disagreement region between the two.
    """
    x = np.asarray(resource_distribution(rng, n_samples), dtype=np.float64)
    label = x >= c_min
    exact_loss = float(np.mean((x >= c_min) != label))
    losses: dict[float, float] = {}
    masses: dict[float, float] = {}
    ok = exact_loss == 0.0
    for eps in perturbations:
        if eps == 0:
            raise ValueError("perturbations must be non-zero")
        c2 = c_min + eps
        losses[eps] = float(np.mean((x >= c2) != label))
        lo, hi = min(c_min, c2), max(c_min, c2)
        masses[eps] = float(np.mean((x >= lo) & (x < hi)))
        ok = ok and ((losses[eps] > 0) == (masses[eps] > 0))
    return ThresholdResult(exact_loss, losses, masses, ok)


# ---------------------------------------------------------------------------
# Consistency decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConsistencyScenario:
    """Ground-truth participation process behind one node's estimate.

    Inclusion happens iff the base coin (prob ``p``) lands, the node is
    feasible (both resources, or a recovery with prob ``beta_true`` when not
    feasible) and no correlated failure (prob ``q``) strikes. The estimator
    sees ``pair``'s marginals, ``rho`` and ``beta``; ``eps_rho`` and ``eps_beta``
    bound ``|q - rho|`` and ``|beta_true - beta|``.
    """

    pair: DependentBernoulliPair
    rho: float
    q: float
    beta: float
    beta_true: float
    p: float = 1.0

    @property
    def kappa(self) -> float:
        return self.pair.kappa

    @property
    def eps_rho(self) -> float:
        return abs(self.q - self.rho)

    @property
    def eps_beta(self) -> float:
        return abs(self.beta_true - self.beta)

    def estimate(self) -> float:
        a = self.pair.independent_joint
        return self.p * (a + (1.0 - a) * self.beta) * (1.0 - self.rho)

    def true_probability(self) -> float:
        e = self.pair.p11
        return self.p * (e + (1.0 - e) * self.beta_true) * (1.0 - self.q)

    def rhs(self) -> float:
        a = self.pair.independent_joint
        k = self.kappa
        return self.p * (k + self.eps_rho + self.eps_beta + a * self.rho * k)


def random_scenario(
    rng: np.random.Generator,
    *,
    max_eps_rho: float = 0.1,
    max_eps_beta: float = 0.1,
    dependence: bool = True,
) -> ConsistencyScenario:
    pair = random_pair(rng) if dependence else DependentBernoulliPair(*map(float, rng.random(2)))
    rho = float(rng.uniform(0.0, 0.5))
    q = float(np.clip(rho + rng.uniform(-max_eps_rho, max_eps_rho), 0.0, 1.0))
    beta = float(rng.random())
    beta_true = float(np.clip(beta + rng.uniform(-max_eps_beta, max_eps_beta), 0.0, 1.0))
    p = float(rng.uniform(0.1, 1.0))
    return ConsistencyScenario(pair, rho, q, beta, beta_true, p)


@dataclass(frozen=True)
class ConsistencyResult:
    lhs: float
    rhs: float
    holds: bool
    sigma: float
    exact_lhs: float


def check_consistency_bound(
    scenario: ConsistencyScenario, n_samples: int, rng: np.random.Generator
) -> ConsistencyResult:
    c, b = scenario.pair.sample(n_samples, rng)
    u = rng.random((3, n_samples))
    coin = u[0] < scenario.p
    recover = u[1] < scenario.beta_true
    struck = u[2] < scenario.q
    included = coin & ((c & b) | recover) & ~struck
    p_hat = float(np.mean(included))
    sigma = math.sqrt(max(p_hat * (1.0 - p_hat), 0.0) / n_samples)
    est = scenario.estimate()
    lhs = abs(est - p_hat)
    rhs = scenario.rhs()
    return ConsistencyResult(
        lhs, rhs, lhs <= rhs + K_SIGMA * sigma, sigma, abs(est - scenario.true_probability())
    )


# ---------------------------------------------------------------------------
# Convergence under sampling distortion
# ---------------------------------------------------------------------------


@dataclass
class QuadraticFLProblem:
    """``F(w) = sum_i q_i * 0.5 * ||w - c_i||^2`` (so mu = L = 1)."""

    centers: np.ndarray
    weights: np.ndarray
    p_true: np.ndarray
    mu: float = 1.0
    smoothness: float = 1.0
    sigma: float = 0.0

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.p_true = np.asarray(self.p_true, dtype=np.float64)
        n = self.centers.shape[0]
        if self.weights.shape != (n,) or self.p_true.shape != (n,):
            raise ValueError("weights and p_true need one entry per client")
        if np.any(self.weights < 0) or not math.isclose(self.weights.sum(), 1.0, abs_tol=1e-12):
            raise ValueError("weights must be non-negative and sum to 1")
        if np.any(self.p_true <= 0) or np.any(self.p_true > 1):
            raise ValueError("p_true must lie in (0, 1]")

    @property
    def n_clients(self) -> int:
        return self.centers.shape[0]

    def optimum(self) -> tuple[np.ndarray, float]:
        w = self.weights @ self.centers
        return w, self.objective(w)

    def objective(self, w: np.ndarray) -> np.ndarray | float:
        """Objective at ``w``; trailing axis is the parameter dimension."""
        w = np.asarray(w, dtype=np.float64)
        diff = w[..., None, :] - self.centers
        val = 0.5 * np.einsum("i,...ij,...ij->...", self.weights, diff, diff)
        return float(val) if val.ndim == 0 else val


def two_client_problem(dim: int = 2, p_true: float = 0.5) -> QuadraticFLProblem:
    e1 = np.zeros(dim)
    e1[0] = 1.0
    return QuadraticFLProblem(np.vstack([e1, -e1]), np.array([0.5, 0.5]), np.full(2, p_true))


def split_distortion(p_true: np.ndarray, delta: float) -> np.ndarray:
    """Proxy probabilities: first half shifted down by ``delta``, second half up."""
    shift = np.where(np.arange(p_true.size) < p_true.size // 2, -delta, delta)
    return np.clip(p_true + shift, None, 1.0)


@dataclass
class ConvergenceResult:
    deltas: list[float]
    floors: list[float]
    floor_sigmas: list[float]
    analytic_bounds: list[float]
    slope: float
    slope_ok: bool
    monotone: bool
    bounded: bool
    curve_t: np.ndarray = field(repr=False)
    curves: np.ndarray = field(repr=False)

    @property
    def holds(self) -> bool:
        return self.slope_ok and self.monotone and self.bounded

    def table(self) -> list[tuple[float, float, float]]:
        return list(zip(self.deltas, self.floors, self.analytic_bounds))


def check_convergence_bound(
    problem: QuadraticFLProblem,
    delta_values: Sequence[float],
    rounds: int,
    trials: int,
    rng: np.random.Generator,
    *,
    gamma: float | None = None,
    w0: np.ndarray | None = None,
    proxy: Callable[[np.ndarray, float], np.ndarray] = split_distortion,
    slope_tolerance: float = 0.15,
    floor_fraction: float = 0.1,
) -> ConvergenceResult:
    """Importance-weighted SGD with Bernoulli inclusions at ``p_true``.

    All ``delta`` values share the same inclusion draws. The floor for each
    ``delta`` is the trial-mean suboptimality averaged over the final
    ``floor_fraction`` of rounds; the decay slope is fitted on the
    ``delta = 0`` curve over the final decade of rounds.
    """
    deltas = [float(d) for d in delta_values]
    if not deltas:
        raise ValueError("need at least one delta")
    mu, L = problem.mu, problem.smoothness
    gamma = max(1.0, L / mu) * 10.0 if gamma is None else float(gamma)
    if gamma < max(1.0, L / mu):
        raise ValueError("gamma must be >= max(1, L/mu)")
    p_true = problem.p_true
    p_min = float(p_true.min())
    proxies = []
    for d in deltas:
        pp = proxy(p_true, d)
        if np.any(np.abs(pp - p_true) > d + 1e-12):
            raise ValueError(f"proxy violates the distortion bound for delta={d}")
        if p_min - d <= 0 or np.any(pp <= 0):
            raise ValueError(f"delta={d} leaves a non-positive proxy probability")
        proxies.append(pp)
    scale = np.stack([problem.weights / pp for pp in proxies])  # (D, N)

    dim = problem.centers.shape[1]
    w_star, f_star = problem.optimum()
    if w0 is None:
        w0 = w_star + 0.25 * np.ones(dim) / math.sqrt(dim)
    w = np.broadcast_to(np.asarray(w0, dtype=np.float64), (len(deltas), trials, dim)).copy()

    record_t = np.unique(np.concatenate([np.arange(0, rounds + 1, max(1, rounds // 400)), [rounds]]))
    curves = np.empty((len(deltas), record_t.size))
    floor_start = int(rounds * (1.0 - floor_fraction))
    floor_acc = np.zeros((len(deltas), trials))
    floor_n = 0
    grad_max = 0.0
    r0 = float(np.sum((w0 - w_star) ** 2))
    rec = 0
    for t in range(rounds + 1):
        sub = problem.objective(w) - f_star  # (D, trials)
        if rec < record_t.size and record_t[rec] == t:
            curves[:, rec] = sub.mean(axis=1)
            rec += 1
        if t >= floor_start:
            floor_acc += sub
            floor_n += 1
        if t == rounds:
            break
        diff = w[:, :, None, :] - problem.centers  # (D, trials, N, dim)
        grad_max = max(grad_max, float(np.sqrt((diff**2).sum(-1)).max()))
        incl = rng.random((trials, problem.n_clients)) < p_true  # shared across delta
        coef = incl[None, :, :] * scale[:, None, :]
        g = np.einsum("dtn,dtnk->dtk", coef, diff)
        if problem.sigma > 0:
            noise = rng.normal(0.0, problem.sigma, size=(trials, problem.n_clients, dim))
            g = g + np.einsum("dtn,tnk->dtk", coef, noise)
        w -= g / (mu * (t + gamma))

    per_trial_floor = floor_acc / floor_n
    floors = per_trial_floor.mean(axis=1)
    floor_sig = per_trial_floor.std(axis=1, ddof=1) / math.sqrt(trials) if trials > 1 else np.zeros(len(deltas))

    # slope over the last decade on the delta = 0 curve (or the smallest delta)
    k0 = int(np.argmin(deltas))
    mask = record_t >= max(1, rounds // 10)
    slope = float(np.polyfit(np.log(record_t[mask] + gamma), np.log(curves[k0, mask]), 1)[0])
    slope_ok = abs(slope + 1.0) <= slope_tolerance if deltas[k0] == 0 else False

    order = np.argsort(deltas)
    monotone = all(
        floors[order[k + 1]] >= floors[order[k]] - K_SIGMA * math.hypot(floor_sig[order[k]], floor_sig[order[k + 1]])
        for k in range(len(order) - 1)
    )

    # analytic right-hand side with G measured over the visited region
    G = grad_max
    n = problem.n_clients
    bounds = []
    for d in deltas:
        b_delta = G * d / (p_min - d)
        a_term = 2.0 * G * b_delta / mu**2
        v = n * (G**2 + problem.sigma**2) / (p_min - d) ** 2
        k_const = max(gamma * r0, v / mu**2)
        r_bound = k_const / (floor_start + gamma) + a_term
        bounds.append(0.5 * L * r_bound)
    bounded = all(f <= bnd for f, bnd in zip(floors, bounds))
    return ConvergenceResult(
        deltas,
        [float(f) for f in floors],
        [float(s) for s in floor_sig],
        bounds,
        slope,
        slope_ok,
        monotone,
        bounded,
        record_t,
        curves,
    )


# ---------------------------------------------------------------------------
# Default suite
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SuiteRow:
    name: str
    passed: bool
    gap: float
    bound: float
    detail: str
    seed: int


def _suite_frechet(rng: np.random.Generator, seed: int, positive_only: bool) -> SuiteRow:
    n_pairs, n_samples = 1000, 20000
    results = [check_frechet_bound(random_pair(rng, positive_only), n_samples, rng) for _ in range(n_pairs)]
    held = sum(r.holds for r in results)
    sharp = sum(r.holds_sharp for r in results)
    worst = max(results, key=lambda r: r.empirical_delta - r.bound)
    name = "frechet_positive" if positive_only else "frechet"
    return SuiteRow(
        name,
        held == n_pairs,
        worst.empirical_delta,
        worst.bound,
        f"{held}/{n_pairs} joints within min(a,b)-ab; {sharp}/{n_pairs} within the two-sided envelope",
        seed,
    )


def _suite_hazard(rng: np.random.Generator, seed: int) -> SuiteRow:
    cases = [(1.0, 1.0), (1e-4, 1.0), (10.0, 1.0), (0.5, 2.0)]
    results = [check_hazard_recovery(lam, dt, 100_000, rng) for lam, dt in cases]
    main = results[0]
    return SuiteRow(
        "hazard",
        all(r.holds for r in results),
        main.gap,
        K_SIGMA * main.sigma,
        f"lambda=delta=1: {main.empirical_beta:.5f} vs {main.analytic_beta:.5f}; {sum(r.holds for r in results)}/{len(cases)} cases",
        seed,
    )


def _suite_threshold(rng: np.random.Generator, seed: int) -> SuiteRow:
    uniform = check_threshold_optimality(lambda g, n: g.random(n), 0.5, 100_000, rng)
    point = check_threshold_optimality(lambda g, n: np.full(n, 0.9), 0.5, 1000, rng)
    agree = all(v == 0.0 for v in point.perturbed.values())
    ok = uniform.holds and point.holds and agree and all(v > 0 for v in uniform.perturbed.values())
    return SuiteRow(
        "threshold",
        ok,
        uniform.exact_loss,
        0.0,
        f"exact loss {uniform.exact_loss}; shifted losses {sorted(round(v, 4) for v in uniform.perturbed.values())}",
        seed,
    )


def _suite_consistency(rng: np.random.Generator, seed: int) -> SuiteRow:
    results = [check_consistency_bound(random_scenario(rng), 100_000, rng) for _ in range(50)]
    exact = check_consistency_bound(
        ConsistencyScenario(DependentBernoulliPair(0.7, 0.8, 0.0), 0.2, 0.2, 0.3, 0.3, 0.9), 100_000, rng
    )
    held = sum(r.holds for r in results)
    worst = max(results, key=lambda r: r.lhs - r.rhs)
    return SuiteRow(
        "consistency",
        held == len(results) and exact.holds,
        worst.lhs,
        worst.rhs + K_SIGMA * worst.sigma,
        f"{held}/{len(results)} scenarios; exact-model gap {exact.lhs:.5f}",
        seed,
    )


def _suite_convergence(rng: np.random.Generator, seed: int) -> SuiteRow:
    setup = np.random.default_rng([seed, 0xC0])
    n = 10
    problem = QuadraticFLProblem(setup.normal(size=(n, 5)), np.full(n, 1.0 / n), np.full(n, 0.5))
    res = check_convergence_bound(problem, [0.0, 0.05, 0.1, 0.2], 10_000, 200, rng)
    floors = ", ".join(f"{d:g}:{f:.2e}" for d, f in zip(res.deltas, res.floors))
    return SuiteRow(
        "convergence",
        res.holds,
        res.slope,
        -1.0,
        f"slope {res.slope:.3f}; floors {floors}; monotone={res.monotone}; within analytic bound={res.bounded}",
        seed,
    )


SUITE: dict[str, Callable[[np.random.Generator, int], SuiteRow]] = {
    "frechet": lambda rng, seed: _suite_frechet(rng, seed, False),
    "frechet_positive": lambda rng, seed: _suite_frechet(rng, seed, True),
    "hazard": _suite_hazard,
    "threshold": _suite_threshold,
    "consistency": _suite_consistency,
    "convergence": _suite_convergence,
}


def run_suite(names: Sequence[str] | None = None, seed: int = 0) -> list[SuiteRow]:
    names = list(SUITE) if not names else list(names)
    unknown = [n for n in names if n not in SUITE]
    if unknown:
        raise KeyError(f"unknown check(s) {unknown}; available: {', '.join(SUITE)}")
    # each check gets its own stream so subsets reproduce the full-suite rows
    return [SUITE[name](np.random.default_rng([seed, k]), seed) for k, name in enumerate(SUITE) if name in names]
