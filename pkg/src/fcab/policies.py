"""Pull strategies over a shared bin partition of the covariate space.

The UCBF policy discretises [0, 1]^dim into K^dim equal bins, treats each
bin as a finite-capacity arm of a multi-armed bandit, and plays an upper
confidence bound index over the bins that still hold unpulled arms.  Bins
that start with fewer than two arms are never alive and their arms are
unreachable; a budget that cannot be met from alive bins is a
configuration error, not a silent under-pull.

Oracle baselines: the greedy oracle pulls arms in decreasing true-mean
order; the discretised oracle empties the best bins (by supplied bin
means) and fills the remainder from the first bin that straddles the
budget.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .analysis import compute_f_hat
from .environment import ArmSet, Instance

__all__ = [
    "POLICY_IDS",
    "Partition",
    "ParameterChoice",
    "PolicyTrace",
    "build_partition",
    "default_parameters",
    "cab_parameters",
    "corollary_parameters",
    "ucbf_index",
    "argmax_lowest",
    "ucbf_run",
    "oracle_star",
    "oracle_discrete",
    "baseline_random",
    "write_trace_jsonl",
]

POLICY_IDS = ("ucbf", "ucbf-cab-k", "oracle-star", "oracle-discrete", "random")

_MAX_BINS = 50_000_000


# ---------------------------------------------------------------------------
# Partition
# ---------------------------------------------------------------------------


@dataclass
class Partition:
    """Assignment of arms to the K^dim half-open bins tiling the unit cube.

    Axis intervals are [j/K, (j+1)/K) with the last interval right-closed,
    so the boundary covariate 1.0 lands in the last bin.  The composite bin
    id is the row-major (first axis most significant) combination of the
    per-axis digits.
    """

    k_per_axis: int
    dim: int
    assignment: np.ndarray  # (n_arms,) bin id per arm
    counts: np.ndarray  # (bin_count,) arms per bin
    _order: np.ndarray = field(repr=False, default=None)
    _offsets: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self._order is None:
            # Stable sort groups arms by bin in ascending arm order.
            self._order = np.argsort(self.assignment, kind="stable")
            self._offsets = np.concatenate(([0], np.cumsum(self.counts)))

    @property
    def bin_count(self) -> int:
        return self.counts.size

    @property
    def n_arms(self) -> int:
        return self.assignment.size

    def initial_alive(self) -> np.ndarray:
        """Bins holding at least two arms at construction."""
        return np.flatnonzero(self.counts >= 2)

    def arms_in_bin(self, b: int) -> np.ndarray:
        return self._order[self._offsets[b] : self._offsets[b + 1]]

    def fresh_remaining(self) -> list[list[int]]:
        """Per-bin mutable lists of unpulled arm indices for one run."""
        return [self.arms_in_bin(b).tolist() for b in range(self.bin_count)]

    def bin_bounds(self, b: int) -> tuple[np.ndarray, np.ndarray]:
        digits = np.array(np.unravel_index(b, (self.k_per_axis,) * self.dim))
        lo = digits / self.k_per_axis
        hi = (digits + 1) / self.k_per_axis
        return lo, hi


def build_partition(arms: ArmSet, k: int) -> Partition:
    if k < 1:
        raise ValueError("need at least one bin per axis")
    bin_count = k**arms.dim
    if bin_count > _MAX_BINS:
        raise ValueError(f"bin count {bin_count} exceeds the supported maximum")
    digits = np.minimum((arms.covariates * k).astype(np.int64), k - 1)
    flat = np.ravel_multi_index(tuple(digits.T), (k,) * arms.dim)
    counts = np.bincount(flat, minlength=bin_count)
    return Partition(k, arms.dim, flat.astype(np.int64), counts)


# ---------------------------------------------------------------------------
# Parameter schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParameterChoice:
    """Bin count per axis and confidence level, with a flag raised when K
    is too small relative to the budget fraction for the regret guarantee
    to be meaningful."""

    k: int
    delta: float
    small_k_warning: bool


def default_parameters(n: int, p: float, dim: int = 1) -> ParameterChoice:
    """Budget-balanced schedule: K ~ N^(1/3) log(N)^(-2/3) in one dimension
    (floor), K ~ N^(1/(d+2)) log(N)^(-2/(d+2)) above (ceiling)."""
    if n < 3:
        raise ValueError("need n >= 3 for a positive logarithm")
    if dim < 1:
        raise ValueError("dimension must be positive")
    ln = math.log(n)
    if dim == 1:
        # The 1e-9 nudge keeps floor/ceil faithful when the float product
        # sits on an integer.
        k = math.floor(n ** (1.0 / 3.0) * ln ** (-2.0 / 3.0) + 1e-9)
        delta = float(n) ** (-4.0 / 3.0)
    else:
        k = math.ceil(n ** (1.0 / (dim + 2)) * ln ** (-2.0 / (dim + 2)) - 1e-9)
        delta = float(n) ** (-(2.0 * dim + 2.0) / (dim + 2.0))
    k = max(k, 1)
    if 0.0 < p < 1.0:
        bound = max(1.0 / p, 1.0 / (1.0 - p))
    else:
        bound = math.inf
    return ParameterChoice(k=k, delta=delta, small_k_warning=k <= bound)


def cab_parameters(t: int) -> int:
    """Interval count sqrt(T)/log(T) tuned for the replayable-arm setting,
    kept as a baseline to compare against the budget-aware schedule."""
    if t < 8:
        raise ValueError("need T >= 8")
    return max(1, math.floor(math.sqrt(t) / math.log(t) + 1e-9))


def corollary_parameters(t: int, alpha: float) -> int:
    """K = floor(alpha^(2/3) (2T)^(1/(3 alpha)) log(2T)^(-2/3)) for budgets
    growing like 0.5 N^alpha."""
    if t < 2:
        raise ValueError("need T >= 2")
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    k = math.floor(
        alpha ** (2.0 / 3.0)
        * (2.0 * t) ** (1.0 / (3.0 * alpha))
        * math.log(2.0 * t) ** (-2.0 / 3.0)
        + 1e-9
    )
    return max(k, 1)


def ucbf_index(sum_rewards: float, n_k: int, t_budget: int, delta: float) -> float:
    """Empirical bin mean plus the exploration bonus sqrt(log(T/delta)/(2n)).

    Never-pulled bins have no index; callers must initialise them with a
    forced pull instead.
    """
    if n_k < 1:
        raise ValueError("index undefined for an unpulled bin")
    if not 0.0 < delta < t_budget:
        raise ValueError("delta must lie in (0, T)")
    return sum_rewards / n_k + math.sqrt(math.log(t_budget / delta) / (2.0 * n_k))


def argmax_lowest(values: Sequence[float]) -> int:
    """Index of the maximum, ties resolved to the lowest index."""
    best = 0
    best_v = values[0]
    for i in range(1, len(values)):
        v = values[i]
        if v > best_v:
            best_v = v
            best = i
    return best


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolicyTrace:
    """Ordered record of one run: which arms were pulled and what they paid."""

    pulled: np.ndarray
    rewards: np.ndarray
    policy_id: str
    seed: int

    def __post_init__(self):
        pulled = np.asarray(self.pulled, dtype=np.int64)
        rewards = np.asarray(self.rewards, dtype=np.float64)
        if pulled.shape != rewards.shape or pulled.ndim != 1:
            raise ValueError("pulled and rewards must be 1-d of equal length")
        object.__setattr__(self, "pulled", pulled)
        object.__setattr__(self, "rewards", rewards)

    def __len__(self) -> int:
        return self.pulled.size


def write_trace_jsonl(trace: PolicyTrace, path, partition: Optional[Partition] = None) -> None:
    """One JSON record per pull: t (1-based), bin, arm, reward."""
    assignment = partition.assignment if partition is not None else None
    with open(path, "w") as fh:
        for i in range(len(trace)):
            arm = int(trace.pulled[i])
            rec = {
                "t": i + 1,
                "bin": int(assignment[arm]) if assignment is not None else None,
                "arm": arm,
                "reward": float(trace.rewards[i]),
            }
            fh.write(json.dumps(rec) + "\n")


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------


def _run_streams(seed: int) -> tuple[np.random.Generator, random.Random]:
    """Independent reward and selection streams derived from one seed."""
    ss = np.random.SeedSequence(seed)
    s_rewards, s_select = ss.spawn(2)
    reward_rng = np.random.default_rng(s_rewards)
    select = random.Random(int(s_select.generate_state(1, np.uint64)[0]))
    return reward_rng, select


def ucbf_run(
    instance: Instance,
    partition: Partition,
    delta: float,
    seed: int,
    policy_id: str = "ucbf",
) -> PolicyTrace:
    """Run the confidence-bound policy over alive bins for T pulls.

    Initialisation pulls one uniformly-random arm from each alive bin in
    ascending bin order (stopping early if the budget runs out); the main
    loop then pulls a uniformly-random arm from the bin with the highest
    index, ties to the lowest bin id.  A bin leaves the alive set in the
    same step its last arm is pulled.
    """
    if partition.n_arms != instance.n:
        raise ValueError("partition was not built from this instance's arms")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    t_budget = instance.T
    reward_rng, select = _run_streams(seed)
    # Each arm is pulled at most once, so its reward can be drawn up front.
    rew = instance.rewards.sample(instance.true_means, reward_rng).tolist()

    counts = partition.counts
    alive = [int(b) for b in partition.initial_alive()]
    reachable = int(counts[alive].sum()) if alive else 0
    if t_budget > reachable:
        raise ValueError(
            f"budget {t_budget} exceeds the {reachable} arms reachable through "
            "alive bins (bins holding fewer than two arms are never pulled)"
        )
    remaining = partition.fresh_remaining()
    max_pulls = int(counts[alive].max())
    log_c = math.log(t_budget / delta)
    bonus = np.sqrt(log_c / (2.0 * np.arange(1, max_pulls + 1))).tolist()
    bonus.insert(0, math.inf)  # index 0 never used after initialisation

    n_pulled = [0] * partition.bin_count
    sums = [0.0] * partition.bin_count
    index_of = [0.0] * partition.bin_count
    pulled: list[int] = []
    obs: list[float] = []
    randrange = select.randrange

    t = 0
    for b in alive:
        if t == t_budget:
            break
        lst = remaining[b]
        j = randrange(len(lst))
        lst[j], lst[-1] = lst[-1], lst[j]
        arm = lst.pop()
        y = rew[arm]
        n_pulled[b] = 1
        sums[b] = y
        index_of[b] = y + bonus[1]
        pulled.append(arm)
        obs.append(y)
        t += 1

    while t < t_budget:
        best = -1
        best_v = -math.inf
        for b in alive:
            v = index_of[b]
            if v > best_v:
                best_v = v
                best = b
        lst = remaining[best]
        m = len(lst)
        j = randrange(m) if m > 1 else 0
        lst[j], lst[-1] = lst[-1], lst[j]
        arm = lst.pop()
        y = rew[arm]
        n = n_pulled[best] + 1
        n_pulled[best] = n
        s = sums[best] + y
        sums[best] = s
        index_of[best] = s / n + bonus[n]
        pulled.append(arm)
        obs.append(y)
        if not lst:
            alive.remove(best)
        t += 1

    return PolicyTrace(np.array(pulled, dtype=np.int64), np.array(obs), policy_id, seed)


def oracle_star(instance: Instance, seed: int = 0) -> PolicyTrace:
    """Greedy oracle: pulls the T arms with the largest true means, in
    decreasing-mean order with ties broken by ascending arm index."""
    pulled = instance.star_order()[: instance.T].copy()
    reward_rng, _ = _run_streams(seed)
    obs = instance.rewards.sample(instance.true_means[pulled], reward_rng)
    return PolicyTrace(pulled, obs, "oracle-star", seed)


def oracle_discrete(
    instance: Instance,
    partition: Partition,
    bin_means,
    seed: int = 0,
) -> PolicyTrace:
    """Discretised oracle: empties the best bins by the supplied bin means
    (ties to the lower bin id), then fills the remaining budget uniformly
    at random from the first bin that straddles it."""
    bin_means = np.asarray(bin_means, dtype=np.float64)
    if bin_means.size != partition.bin_count:
        raise ValueError("one bin mean per bin required")
    if partition.n_arms != instance.n:
        raise ValueError("partition was not built from this instance's arms")
    order = np.argsort(-bin_means, kind="stable")
    f_hat = compute_f_hat(partition.counts[order], instance.T)
    parts = [partition.arms_in_bin(int(b)) for b in order[:f_hat]]
    taken = sum(p.size for p in parts)
    remainder = instance.T - taken
    reward_rng, select = _run_streams(seed)
    if remainder > 0:
        pool = partition.arms_in_bin(int(order[f_hat])).tolist()
        parts.append(np.array(select.sample(pool, remainder), dtype=np.int64))
    pulled = np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
    obs = instance.rewards.sample(instance.true_means[pulled], reward_rng)
    return PolicyTrace(pulled, obs, "oracle-discrete", seed)


def baseline_random(instance: Instance, seed: int = 0) -> PolicyTrace:
    """Uniformly random size-T subset, pulled in random order."""
    reward_rng, _ = _run_streams(seed)
    pulled = reward_rng.permutation(instance.n)[: instance.T].astype(np.int64)
    obs = instance.rewards.sample(instance.true_means[pulled], reward_rng)
    return PolicyTrace(pulled, obs, "random", seed)
