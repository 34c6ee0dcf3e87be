"""Shared-fraction theory, alpha calibration, collusion risk and overhead scaling.

``beta(alpha, delta, s)`` is the expected fraction of parameters a sender
actually transmits to a receiver of degree ``delta`` when every node keeps
each index independently with probability ``alpha`` and an index needs at
least ``s`` masks to be sent.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, InvalidRegularity, Unachievable
from .protocol import RoundConfig, run_cesar_round
from .sparsifier import Method, SelectionSpec
from .topology import avg_second_degree_size, gen_regular_graph, regular_adjacency


def _check_beta_args(alpha: float, delta: int, s: int) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
    if delta < 1:
        raise ConfigError(f"receiver degree must be >= 1, got {delta}")
    if s < 1:
        raise ConfigError(f"masking requirement must be >= 1, got {s}")


def beta_closed_form(alpha: float, delta: int, s: int = 1) -> float:
    """Sum over i = s..delta-1 of C(delta-1, i) alpha^(i+1) (1-alpha)^(delta-1-i).

    Terms are evaluated in log space so large degrees do not overflow; the
    binomial coefficient itself is exact.
    """
    _check_beta_args(alpha, delta, s)
    if s > delta - 1 or alpha == 0.0:
        return 0.0
    if alpha == 1.0:
        return 1.0
    la, lb = math.log(alpha), math.log1p(-alpha)
    m = delta - 1
    return math.fsum(
        math.exp(math.log(math.comb(m, i)) + (i + 1) * la + (m - i) * lb) for i in range(s, delta)
    )


def beta_no_collusion(alpha: float, delta: int) -> float:
    """Closed form at s = 1: alpha * (1 - (1 - alpha)^(delta - 1))."""
    _check_beta_args(alpha, delta, 1)
    return alpha * (1.0 - (1.0 - alpha) ** (delta - 1))


def calibrate_alpha(beta_target: float, delta: int, s: int = 1, tol: float = 1e-12) -> float:
    """Smallest alpha with beta(alpha, delta, s) = beta_target, by bisection."""
    if not 0.0 < beta_target < 1.0:
        raise ConfigError(f"beta target must be in (0, 1), got {beta_target}")
    if beta_closed_form(1.0, delta, s) < beta_target:
        raise Unachievable(
            f"beta target {beta_target} is unachievable for degree {delta} with masking requirement {s}"
        )
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if beta_closed_form(mid, delta, s) < beta_target:
            lo = mid
        else:
            hi = mid
    alpha = 0.5 * (lo + hi)
    assert abs(beta_closed_form(alpha, delta, s) - beta_target) < 1e-6
    return alpha


def beta_monte_carlo(alpha: float, delta: int, s: int, trials: int, seed: int,
                     chunk: int = 200_000) -> tuple[float, float]:
    """Simulate one sender and delta-1 other neighbours of a receiver.

    Returns ``(estimate, standard error)``.
    """
    _check_beta_args(alpha, delta, s)
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        picks = rng.random((m, delta)) < alpha
        hits += int(np.count_nonzero(picks[:, 0] & (picks[:, 1:].sum(axis=1) >= s)))
        done += m
    p = hits / trials
    return p, math.sqrt(p * (1 - p) / trials)


# -- collusion risk ---------------------------------------------------------------


@dataclass(frozen=True)
class RiskConfig:
    n: int
    k: int
    n_adv: int
    s: int
    trials: int
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.n_adv <= self.n:
            raise ConfigError(f"adversary count must be in [0, n], got {self.n_adv}")
        if self.s < 1:
            raise ConfigError("masking requirement must be >= 1")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.k < 0 or self.k >= self.n or (self.n * self.k) % 2:
            raise InvalidRegularity(f"no simple {self.k}-regular graph on {self.n} nodes")


def _exposure(n: int, k: int, n_adv: int, trial_seed: int) -> int:
    """Largest adversarial-neighbour count among adversaries with an honest neighbour.

    A trial is at risk for masking requirement s iff this value is >= s.
    Returns -1 when no adversary touches an honest node.
    """
    rng = np.random.default_rng(trial_seed)
    adj = regular_adjacency(n, k, rng)
    adv = rng.choice(n, size=n_adv, replace=False)
    adv_nbrs = adj[np.ix_(adv, adv)].sum(axis=1)
    touches_honest = adv_nbrs < k
    if not touches_honest.any():
        return -1
    return int(adv_nbrs[touches_honest].max())


def _exposure_chunk(args) -> np.ndarray:
    n, k, n_adv, seed, start, stop = args
    return np.array([_exposure(n, k, n_adv, seed + t) for t in range(start, stop)], dtype=np.int64)


def exposure_samples(n: int, k: int, n_adv: int, trials: int, seed: int, workers: int = 1) -> np.ndarray:
    """Per-trial exposure values; trial ``t`` always uses seed ``seed + t``."""
    RiskConfig(n, k, n_adv, 1, trials, seed)
    if workers <= 1:
        return _exposure_chunk((n, k, n_adv, seed, 0, trials))
    bounds = np.linspace(0, trials, 4 * workers + 1).astype(int)
    jobs = [(n, k, n_adv, seed, a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return np.concatenate(list(pool.map(_exposure_chunk, jobs)))


def risk_from_exposure(exposure: np.ndarray, s: int) -> tuple[float, float]:
    p = float(np.mean(exposure >= s))
    return p, math.sqrt(p * (1 - p) / exposure.size)


def collusion_risk_mc(cfg: RiskConfig, workers: int = 1) -> tuple[float, float]:
    """Fraction of trials where some honest node borders an adversary with >= s adversarial neighbours."""
    exp = exposure_samples(cfg.n, cfg.k, cfg.n_adv, cfg.trials, cfg.seed, workers)
    return risk_from_exposure(exp, cfg.s)


def collusion_risk_sweep(n: int, k: int, n_adv: int, s_values: Sequence[int], trials: int,
                         seed: int, workers: int = 1) -> list[tuple[int, float, float]]:
    """Risk for several masking requirements over one shared set of trials."""
    exp = exposure_samples(n, k, n_adv, trials, seed, workers)
    return [(s, *risk_from_exposure(exp, s)) for s in s_values]


# -- overhead -------------------------------------------------------------------------


def prestep_overhead_model(alpha: float, d: int, delta_max: int) -> float:
    """Trend value alpha * d * delta_max^2 for the prestep traffic."""
    return alpha * d * delta_max**2


@dataclass(frozen=True)
class OverheadRow:
    degree: int
    prestep_bytes_per_node: float
    avg_second_degree: float
    bytes_per_second_degree_neighbor: float


def measure_prestep_overhead(n: int, degrees: Sequence[int], alpha: float, d: int, trials: int,
                             method: Method | str = Method.TOPK, seed: int = 0) -> list[OverheadRow]:
    """Run protocol rounds on random k-regular graphs and average prestep bytes per node."""
    method = Method(method)
    rows = []
    for k in degrees:
        per_node, second = [], []
        for trial in range(trials):
            t = gen_regular_graph(n, k, seed + trial)
            params = np.random.default_rng([seed, k, trial]).normal(size=(n, d))
            spec = SelectionSpec(method, alpha)
            res = run_cesar_round(params, t, RoundConfig(1, spec), 0, seed + trial)
            per_node.append(np.mean([r.sent_protocol_bytes for r in res.records]))
            second.append(avg_second_degree_size(t))
        b, v2 = float(np.mean(per_node)), float(np.mean(second))
        rows.append(OverheadRow(k, b, v2, b / v2 if v2 else 0.0))
    return rows


def linear_fit_r2(x: Sequence[float], y: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares line ``y = a x + b``; returns ``(a, b, R^2)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    a, b = np.polyfit(x, y, 1)
    resid = y - (a * x + b)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot else 1.0
    return float(a), float(b), r2
