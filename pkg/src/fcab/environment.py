"""Problem instances for budgeted bandits over continuous covariates.

An instance consists of a set of one-shot arms described by covariates in
the unit cube, a mean-reward function mapping covariates to [0, 1], a
reward model with that conditional mean, and a pull budget T.  The
difficulty of an instance is organised around the threshold M, the
(1 - T/N)-level of the mean function: arms with mean at or above M are the
ones worth spending budget on.

The module also constructs the adversarial two-function instance pair used
by the lower-bound protocol (two piecewise-linear means differing only on
two narrow bumps around the threshold), and provides grid-based numerical
validators for the weak-Lipschitz and margin regularity conditions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "ArmSet",
    "MeanFunction",
    "Constant",
    "PiecewiseLinear",
    "Sinusoid",
    "Tabulated",
    "LowerBoundMember",
    "RewardModel",
    "Instance",
    "InstancePair",
    "ValidationReport",
    "sample_arms_uniform",
    "grid_arms",
    "eval_mean",
    "compute_threshold_M",
    "make_lower_bound_pair",
    "verify_weak_lipschitz",
    "verify_margin",
    "sample_reward",
    "bernoulli_kl",
    "instance_kl",
    "mean_function_from_json",
]

UNIFORM = "uniform"
GRID = "grid"


# ---------------------------------------------------------------------------
# Arms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArmSet:
    """Ordered collection of arm covariates in [0, 1]^dim.

    ``origin`` records how the covariates were produced: ``"uniform"`` for
    i.i.d. uniform draws or ``"grid"`` for the deterministic one-dimensional
    lattice i/N, i = 1..N.
    """

    covariates: np.ndarray  # shape (n, dim)
    origin: str

    def __post_init__(self):
        cov = np.asarray(self.covariates, dtype=np.float64)
        if cov.ndim != 2 or cov.shape[0] < 1 or cov.shape[1] < 1:
            raise ValueError("covariates must be a non-empty (n, dim) array")
        if np.any(cov < 0.0) or np.any(cov > 1.0):
            raise ValueError("covariates must lie in the unit cube")
        if self.origin not in (UNIFORM, GRID):
            raise ValueError(f"unknown arm origin {self.origin!r}")
        cov.setflags(write=False)
        object.__setattr__(self, "covariates", cov)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def dim(self) -> int:
        return self.covariates.shape[1]

    @property
    def x(self) -> np.ndarray:
        """Flat covariate vector; only meaningful for dim = 1."""
        if self.dim != 1:
            raise ValueError("flat view requires one-dimensional covariates")
        return self.covariates[:, 0]


def sample_arms_uniform(n: int, dim: int, seed: int) -> ArmSet:
    """Draw ``n`` covariates i.i.d. uniform on [0, 1]^dim, reproducibly."""
    if n < 1:
        raise ValueError("need at least one arm")
    if dim < 1:
        raise ValueError("dimension must be positive")
    rng = np.random.default_rng(seed)
    return ArmSet(rng.random((n, dim)), UNIFORM)


def grid_arms(n: int) -> ArmSet:
    """Deterministic one-dimensional arms at i/n for i = 1..n."""
    if n < 1:
        raise ValueError("need at least one arm")
    x = np.arange(1, n + 1, dtype=np.float64) / n
    return ArmSet(x.reshape(n, 1), GRID)


# ---------------------------------------------------------------------------
# Mean-reward functions
# ---------------------------------------------------------------------------


def _as_points(x, dim: int) -> tuple[np.ndarray, bool]:
    """Normalise input to an (n, dim) array; returns (points, was_scalar)."""
    a = np.asarray(x, dtype=np.float64)
    if dim == 1:
        if a.ndim == 0:
            return a.reshape(1, 1), True
        if a.ndim == 1:
            return a.reshape(-1, 1), False
        if a.ndim == 2 and a.shape[1] == 1:
            return a, False
    else:
        if a.ndim == 1 and a.shape[0] == dim:
            return a.reshape(1, dim), True
        if a.ndim == 2 and a.shape[1] == dim:
            return a, False
    raise ValueError(f"expected points of dimension {dim}, got shape {a.shape}")


class MeanFunction:
    """Evaluable mean-reward map [0, 1]^dim -> [0, 1] with regularity metadata.

    ``lipschitz_L`` and ``margin_Q`` carry the constants of the
    weak-Lipschitz and margin conditions when they are known for the
    function; ``analytic_M`` carries the exact threshold level when it is
    available in closed form (validators and threshold computation fall
    back to grid estimates otherwise).
    """

    kind: str = "abstract"
    dim: int = 1
    lipschitz_L: Optional[float] = None
    margin_Q: Optional[float] = None
    analytic_M: Optional[float] = None

    def evaluate(self, x) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x):
        return self.evaluate(x)

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(MeanFunction):
    """m(x) = value everywhere."""

    value: float = 0.5
    dim: int = 1
    kind: str = field(default="constant", init=False)

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError("constant mean must lie in [0, 1]")
        object.__setattr__(self, "lipschitz_L", 0.0)
        object.__setattr__(self, "margin_Q", None)
        object.__setattr__(self, "analytic_M", self.value)

    def evaluate(self, x):
        pts, scalar = _as_points(x, self.dim)
        out = np.full(pts.shape[0], self.value, dtype=np.float64)
        return float(out[0]) if scalar else out

    def to_json(self):
        return {"kind": self.kind, "value": self.value, "dim": self.dim}


@dataclass(frozen=True)
class PiecewiseLinear(MeanFunction):
    """Linear interpolation through (breakpoints, values) on [0, 1].

    Breakpoints must be strictly increasing and span [0, 1]; values must
    stay inside [0, 1].  The global Lipschitz constant (max absolute slope)
    is derived automatically when not supplied.
    """

    breakpoints: tuple = ()
    values: tuple = ()
    lipschitz_L: Optional[float] = None
    margin_Q: Optional[float] = None
    analytic_M: Optional[float] = None
    dim: int = field(default=1, init=False)
    kind: str = field(default="piecewise_linear", init=False)

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=np.float64)
        vv = np.asarray(self.values, dtype=np.float64)
        if bp.ndim != 1 or bp.size < 2 or bp.shape != vv.shape:
            raise ValueError("breakpoints and values must be 1-d of equal length >= 2")
        if bp[0] != 0.0 or bp[-1] != 1.0:
            raise ValueError("breakpoints must span [0, 1]")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if np.any(vv < 0.0) or np.any(vv > 1.0):
            raise ValueError("values must lie in [0, 1]")
        object.__setattr__(self, "breakpoints", tuple(bp.tolist()))
        object.__setattr__(self, "values", tuple(vv.tolist()))
        if self.lipschitz_L is None:
            slopes = np.diff(vv) / np.diff(bp)
            object.__setattr__(self, "lipschitz_L", float(np.max(np.abs(slopes))))

    def evaluate(self, x):
        pts, scalar = _as_points(x, 1)
        out = np.interp(pts[:, 0], self.breakpoints, self.values)
        return float(out[0]) if scalar else out

    def to_json(self):
        return {
            "kind": self.kind,
            "breakpoints": list(self.breakpoints),
            "values": list(self.values),
            "lipschitz_L": self.lipschitz_L,
            "margin_Q": self.margin_Q,
            "analytic_M": self.analytic_M,
        }


def identity_mean() -> PiecewiseLinear:
    """The linear mean m(x) = x."""
    return PiecewiseLinear((0.0, 1.0), (0.0, 1.0))


@dataclass(frozen=True)
class Sinusoid(MeanFunction):
    """m(x) = offset + amplitude * sin(2 pi frequency * u).

    For one-dimensional inputs u is the covariate itself; in higher
    dimension u is the coordinate average, which keeps the phase argument
    in [0, 1].  The range offset +- |amplitude| must stay inside [0, 1].
    """

    amplitude: float = 0.4
    frequency: float = 1.0
    offset: float = 0.5
    dim: int = 1
    margin_Q: Optional[float] = None
    analytic_M: Optional[float] = None
    kind: str = field(default="sinusoid", init=False)

    def __post_init__(self):
        if self.frequency <= 0:
            raise ValueError("frequency must be positive")
        lo = self.offset - abs(self.amplitude)
        hi = self.offset + abs(self.amplitude)
        if lo < 0.0 or hi > 1.0:
            raise ValueError("sinusoid range must stay inside [0, 1]")
        # Euclidean gradient norm of the coordinate-average phase argument.
        lip = abs(self.amplitude) * 2.0 * math.pi * self.frequency / math.sqrt(self.dim)
        object.__setattr__(self, "lipschitz_L", lip)

    def evaluate(self, x):
        pts, scalar = _as_points(x, self.dim)
        u = pts[:, 0] if self.dim == 1 else pts.mean(axis=1)
        out = self.offset + self.amplitude * np.sin(2.0 * math.pi * self.frequency * u)
        return float(out[0]) if scalar else out

    def to_json(self):
        return {
            "kind": self.kind,
            "amplitude": self.amplitude,
            "frequency": self.frequency,
            "offset": self.offset,
            "dim": self.dim,
            "margin_Q": self.margin_Q,
            "analytic_M": self.analytic_M,
        }


@dataclass(frozen=True)
class Tabulated(MeanFunction):
    """Values on a uniform grid over [0, 1] (endpoints included), with
    linear interpolation in between."""

    grid_values: tuple = ()
    margin_Q: Optional[float] = None
    analytic_M: Optional[float] = None
    dim: int = field(default=1, init=False)
    kind: str = field(default="tabulated", init=False)

    def __post_init__(self):
        vv = np.asarray(self.grid_values, dtype=np.float64)
        if vv.ndim != 1 or vv.size < 2:
            raise ValueError("need at least two tabulated values")
        if np.any(vv < 0.0) or np.any(vv > 1.0):
            raise ValueError("tabulated values must lie in [0, 1]")
        object.__setattr__(self, "grid_values", tuple(vv.tolist()))
        h = 1.0 / (vv.size - 1)
        object.__setattr__(self, "lipschitz_L", float(np.max(np.abs(np.diff(vv))) / h))

    @property
    def _knots(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, len(self.grid_values))

    def evaluate(self, x):
        pts, scalar = _as_points(x, 1)
        out = np.interp(pts[:, 0], self._knots, self.grid_values)
        return float(out[0]) if scalar else out

    def to_json(self):
        return {
            "kind": self.kind,
            "grid_values": list(self.grid_values),
            "margin_Q": self.margin_Q,
            "analytic_M": self.analytic_M,
        }


@dataclass(frozen=True)
class LowerBoundMember(MeanFunction):
    """One member of the adversarial pair around the threshold 1/2.

    Both members climb linearly with slope ``l_tilde`` towards 1/2 at
    ``x0``, then carry two bump segments of half-width ``half_width`` on
    [x0, 1-p] and [1-p, x1], and climb away from 1/2 after ``x1``.  The
    role decides the bump orientation: role 0 dips below 1/2 on the left
    bump and rises on the right one, role 1 is the mirror image.  The two
    roles agree pointwise outside [x0, x1] and share the exact threshold
    level 1/2.
    """

    role: int = 0
    p: float = 0.5
    l_tilde: float = 0.5
    half_width: float = 0.01
    margin_Q: Optional[float] = None
    dim: int = field(default=1, init=False)
    kind: str = field(default="lower_bound_member", init=False)

    def __post_init__(self):
        if self.role not in (0, 1):
            raise ValueError("role must be 0 or 1")
        if not 0.0 < self.p < 1.0:
            raise ValueError("p must lie in (0, 1)")
        if self.half_width <= 0 or 2.0 * self.half_width >= min(self.p, 1.0 - self.p):
            raise ValueError("bump width too large for this budget fraction")
        if not 0.0 < self.l_tilde <= 0.5:
            raise ValueError("slope must lie in (0, 0.5]")
        object.__setattr__(self, "lipschitz_L", self.l_tilde)
        object.__setattr__(self, "analytic_M", 0.5)

    @property
    def x0(self) -> float:
        return 1.0 - self.p - 2.0 * self.half_width

    @property
    def x1(self) -> float:
        return 1.0 - self.p + 2.0 * self.half_width

    def _knots(self) -> tuple[np.ndarray, np.ndarray]:
        lt, d = self.l_tilde, self.half_width
        xs = np.array([0.0, self.x0, self.x0 + d, 1.0 - self.p, 1.0 - self.p + d, self.x1, 1.0])
        bump = lt * d
        if self.role == 0:
            mids = (0.5 - bump, 0.5, 0.5 + bump)
        else:
            mids = (0.5 + bump, 0.5, 0.5 - bump)
        ys = np.array([0.5 - lt * self.x0, 0.5, mids[0], mids[1], mids[2], 0.5, 0.5 + lt * (1.0 - self.x1)])
        return xs, ys

    def evaluate(self, x):
        pts, scalar = _as_points(x, 1)
        xs, ys = self._knots()
        out = np.interp(pts[:, 0], xs, ys)
        return float(out[0]) if scalar else out

    def as_piecewise_linear(self) -> PiecewiseLinear:
        xs, ys = self._knots()
        return PiecewiseLinear(
            tuple(xs.tolist()),
            tuple(ys.tolist()),
            lipschitz_L=self.lipschitz_L,
            margin_Q=self.margin_Q,
            analytic_M=0.5,
        )

    def to_json(self):
        return {
            "kind": self.kind,
            "role": self.role,
            "p": self.p,
            "l_tilde": self.l_tilde,
            "half_width": self.half_width,
            "margin_Q": self.margin_Q,
        }


_MEAN_KINDS = {
    "constant": Constant,
    "piecewise_linear": PiecewiseLinear,
    "sinusoid": Sinusoid,
    "tabulated": Tabulated,
    "lower_bound_member": LowerBoundMember,
}


def mean_function_from_json(spec: dict) -> MeanFunction:
    """Rebuild a mean function from its JSON description."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValueError("mean function description must be an object with a 'kind' tag")
    kind = spec["kind"]
    if kind not in _MEAN_KINDS:
        raise ValueError(f"unknown mean function kind {kind!r}")
    kwargs = {k: v for k, v in spec.items() if k != "kind"}
    if kind in ("piecewise_linear",):
        kwargs["breakpoints"] = tuple(kwargs["breakpoints"])
        kwargs["values"] = tuple(kwargs["values"])
    if kind == "tabulated":
        kwargs["grid_values"] = tuple(kwargs["grid_values"])
    return _MEAN_KINDS[kind](**kwargs)


def eval_mean(f: MeanFunction, x) -> float:
    """Evaluate ``f`` at a single point, rejecting points outside the cube."""
    pts, _ = _as_points(x, f.dim)
    if pts.shape[0] != 1:
        raise ValueError("eval_mean takes a single point")
    if np.any(pts < 0.0) or np.any(pts > 1.0):
        raise ValueError("point outside the unit cube")
    return float(f.evaluate(pts)[0])


# ---------------------------------------------------------------------------
# Reward models
# ---------------------------------------------------------------------------

BERNOULLI = "bernoulli"
CLIPPED_GAUSSIAN = "clipped_gaussian"


@dataclass(frozen=True)
class RewardModel:
    """Conditional reward distribution with values in [0, 1].

    ``bernoulli`` rewards hit the requested mean exactly.  The
    ``clipped_gaussian`` model adds centred Gaussian noise of scale
    ``sigma`` and clips the result to [0, 1]; clipping biases the
    conditional mean towards 1/2 by at most sigma * exp(-d^2 / (2 sigma^2))
    where d is the distance from the mean to the nearer endpoint, so it is
    only a faithful model away from the endpoints.
    """

    kind: str = BERNOULLI
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in (BERNOULLI, CLIPPED_GAUSSIAN):
            raise ValueError(f"unknown reward model {self.kind!r}")
        if self.kind == CLIPPED_GAUSSIAN and self.sigma <= 0:
            raise ValueError("clipped gaussian needs a positive sigma")

    def sample(self, means: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Draw one reward per entry of ``means``."""
        means = np.asarray(means, dtype=np.float64)
        if means.size and (means.min() < 0.0 or means.max() > 1.0):
            raise ValueError("reward means must lie in [0, 1]")
        if self.kind == BERNOULLI:
            return (rng.random(means.shape) < means).astype(np.float64)
        draw = means + self.sigma * rng.standard_normal(means.shape)
        return np.clip(draw, 0.0, 1.0)

    def to_json(self):
        out = {"kind": self.kind}
        if self.kind == CLIPPED_GAUSSIAN:
            out["sigma"] = self.sigma
        return out


def reward_model_from_json(spec: dict) -> RewardModel:
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValueError("reward model description must be an object with a 'kind' tag")
    return RewardModel(kind=spec["kind"], sigma=float(spec.get("sigma", 0.0)))


def sample_reward(model: RewardModel, mean: float, rng: np.random.Generator) -> float:
    """Draw a single reward with the given conditional mean."""
    if not 0.0 <= mean <= 1.0:
        raise ValueError("mean must lie in [0, 1]")
    return float(model.sample(np.array([mean]), rng)[0])


# ---------------------------------------------------------------------------
# Threshold
# ---------------------------------------------------------------------------


def _threshold_grid(dim: int, resolution: int) -> np.ndarray:
    """Left-endpoint lattice used for the empirical quantile."""
    if dim == 1:
        return (np.arange(resolution, dtype=np.float64) / resolution).reshape(-1, 1)
    per_axis = max(2, int(round(resolution ** (1.0 / dim))))
    axes = [np.arange(per_axis, dtype=np.float64) / per_axis] * dim
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def compute_threshold_M(
    f: MeanFunction,
    p: float,
    resolution: int = 10**6,
    use_analytic: bool = True,
) -> float:
    """Threshold level M = inf{A : measure{m >= A} < p}.

    Returns the declared analytic value when available.  Otherwise takes
    the empirical (1 - p)-quantile of ``f`` over a uniform left-endpoint
    grid, with the infimum convention on plateaus: the result is the
    smallest grid value whose exceedance fraction drops below ``p``.  The
    grid error is at most L * dim / resolution for an L-Lipschitz mean.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if resolution < 1000:
        raise ValueError("resolution below 1000 rejected")
    if use_analytic and f.analytic_M is not None:
        return float(f.analytic_M)
    values = f.evaluate(_threshold_grid(f.dim, resolution))
    r = values.shape[0]
    # Largest exceedance count still below p*r; the 1e-9 nudge absorbs the
    # float error of p*r when it is mathematically an integer.
    m_star = math.ceil(p * r - 1e-9) - 1
    m_star = min(max(m_star, 0), r - 1)
    pos = r - 1 - m_star
    return float(np.partition(values, pos)[pos])


# ---------------------------------------------------------------------------
# Instances
# ---------------------------------------------------------------------------


@dataclass
class Instance:
    """A fully-specified budgeted bandit problem.

    ``true_means`` caches the mean function evaluated at every covariate;
    ``star_order`` is the greedy-oracle permutation (decreasing true mean,
    ties by ascending arm index), computed lazily and reused by both the
    oracle policy and the regret computations.
    """

    arms: ArmSet
    mean: MeanFunction
    rewards: RewardModel
    T: int
    p: float
    threshold_M: float
    true_means: np.ndarray
    _star_order: Optional[np.ndarray] = field(default=None, repr=False)
    _top_sum: Optional[float] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.arms.n

    def star_order(self) -> np.ndarray:
        if self._star_order is None:
            # Stable sort on negated means: ties resolve to the lower index.
            self._star_order = np.argsort(-self.true_means, kind="stable")
        return self._star_order

    def top_mean_sum(self) -> float:
        """Sum of the T largest true means, accumulated in ascending arm
        index order so that identical pull sets reproduce it bitwise."""
        if self._top_sum is None:
            mask = np.zeros(self.n, dtype=bool)
            mask[self.star_order()[: self.T]] = True
            self._top_sum = float(self.true_means[mask].sum())
        return self._top_sum


def make_instance(
    arms: ArmSet,
    mean: MeanFunction,
    rewards: RewardModel,
    T: int,
    threshold_resolution: int = 10**6,
) -> Instance:
    if not 0 < T <= arms.n:
        raise ValueError("budget must satisfy 0 < T <= N")
    if mean.dim != arms.dim:
        raise ValueError("mean function dimension must match the covariates")
    p = T / arms.n
    if p < 1.0:
        threshold = compute_threshold_M(mean, p, threshold_resolution)
    else:
        # T = N pulls everything; the threshold is the smallest mean.
        threshold = float(np.min(mean.evaluate(arms.covariates)))
    means = np.asarray(mean.evaluate(arms.covariates), dtype=np.float64)
    return Instance(arms, mean, rewards, T, p, threshold, means)


# ---------------------------------------------------------------------------
# Lower-bound pair
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InstancePair:
    """Adversarial pair of mean functions for the lower-bound protocol."""

    m0: LowerBoundMember
    m1: LowerBoundMember
    lb_half_width: float
    x0: float
    x1: float
    alpha_lb: float
    L_tilde: float
    p: float
    n_design: int  # the N the bump width was calibrated against


def make_lower_bound_pair(p: float, L: float, alpha_lb: float, N: int) -> InstancePair:
    """Build the two-bump pair calibrated so the reward histories stay
    statistically close (per-arm Bernoulli KL summing to O(alpha^3)).

    The bump half-width is alpha_lb * (N * L~^2)^(-1/3) with L~ = min(L, 0.5).
    ``alpha_lb`` must lie in (20 N^(-2/3), 0.5] and the bumps must fit
    strictly between 0 and 1; violating either signals that N is too small
    for this (p, L).
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if L <= 0:
        raise ValueError("L must be positive")
    if N < 1:
        raise ValueError("N must be positive")
    lo = 20.0 * N ** (-2.0 / 3.0)
    if not lo < alpha_lb <= 0.5:
        raise ValueError(
            f"alpha_lb must lie in ({lo:.6g}, 0.5]; N is too small for this choice"
        )
    l_tilde = min(L, 0.5)
    half_width = alpha_lb * (N * l_tilde**2) ** (-1.0 / 3.0)
    if 2.0 * half_width >= min(p, 1.0 - p):
        raise ValueError(
            "bump width does not fit between the budget fraction and its "
            "complement; N is too small for this (p, L)"
        )
    q = 6.0 * max(1.0 / L, 2.0)
    m0 = LowerBoundMember(role=0, p=p, l_tilde=l_tilde, half_width=half_width, margin_Q=q)
    m1 = LowerBoundMember(role=1, p=p, l_tilde=l_tilde, half_width=half_width, margin_Q=q)
    return InstancePair(
        m0=m0,
        m1=m1,
        lb_half_width=half_width,
        x0=m0.x0,
        x1=m0.x1,
        alpha_lb=alpha_lb,
        L_tilde=l_tilde,
        p=p,
        n_design=N,
    )


# ---------------------------------------------------------------------------
# Assumption validators
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    """Outcome of a grid-based regularity check.

    Violations are content, not errors: ``passed`` is False when the worst
    observed violation exceeds the numerical slack 2/grid.
    """

    check: str
    passed: bool
    worst_violation: float
    slack: float
    details: dict

    def to_json(self) -> dict:
        return {
            "check": self.check,
            "passed": bool(self.passed),
            "worst_violation": self.worst_violation,
            "slack": self.slack,
            "details": self.details,
        }


def _validator_points(f: MeanFunction, grid: int, seed: int) -> np.ndarray:
    if f.dim == 1:
        return np.linspace(0.0, 1.0, grid).reshape(-1, 1)
    return np.random.default_rng(seed).random((grid, f.dim))


def verify_weak_lipschitz(
    f: MeanFunction,
    M: float,
    L: float,
    grid: int = 2000,
    seed: int = 0,
) -> ValidationReport:
    """Check |m(x) - m(y)| <= max(|M - m(x)|, L * dist(x, y)) on grid pairs.

    All ordered pairs are tested when grid <= 2000; above that, 10^6
    seeded random ordered pairs.  Distance is Euclidean in dimension > 1.
    """
    if grid < 1000:
        raise ValueError("grid below 1000 rejected")
    pts = _validator_points(f, grid, seed)
    vals = np.asarray(f.evaluate(pts), dtype=np.float64)
    slack = 2.0 / grid
    worst = -math.inf
    worst_pair = (0, 0)
    if grid <= 2000:
        mode = "exhaustive"
        checked = grid * grid
        # Row blocks keep the pairwise matrices small.
        block = 256
        for lo in range(0, grid, block):
            hi = min(lo + block, grid)
            dv = np.abs(vals[lo:hi, None] - vals[None, :])
            if f.dim == 1:
                dx = np.abs(pts[lo:hi, 0:1] - pts[None, :, 0])
            else:
                diff = pts[lo:hi, None, :] - pts[None, :, :]
                dx = np.sqrt((diff**2).sum(axis=2))
            bound = np.maximum(np.abs(M - vals[lo:hi])[:, None], L * dx)
            viol = dv - bound
            i, j = np.unravel_index(np.argmax(viol), viol.shape)
            if viol[i, j] > worst:
                worst = float(viol[i, j])
                worst_pair = (lo + int(i), int(j))
    else:
        mode = "sampled"
        checked = 10**6
        rng = np.random.default_rng(seed + 1)
        ii = rng.integers(0, grid, checked)
        jj = rng.integers(0, grid, checked)
        dv = np.abs(vals[ii] - vals[jj])
        if f.dim == 1:
            dx = np.abs(pts[ii, 0] - pts[jj, 0])
        else:
            dx = np.sqrt(((pts[ii] - pts[jj]) ** 2).sum(axis=1))
        viol = dv - np.maximum(np.abs(M - vals[ii]), L * dx)
        k = int(np.argmax(viol))
        worst = float(viol[k])
        worst_pair = (int(ii[k]), int(jj[k]))
    xi, xj = pts[worst_pair[0]], pts[worst_pair[1]]
    return ValidationReport(
        check="weak_lipschitz",
        passed=worst <= slack,
        worst_violation=worst,
        slack=slack,
        details={
            "mode": mode,
            "pairs_checked": checked,
            "L": L,
            "M": M,
            "worst_x": xi.tolist() if f.dim > 1 else float(xi[0]),
            "worst_y": xj.tolist() if f.dim > 1 else float(xj[0]),
        },
    )


def verify_margin(
    f: MeanFunction,
    M: float,
    Q: float,
    eps_values,
    grid: int = 10**6,
    seed: int = 0,
) -> ValidationReport:
    """Check measure{x : |M - m(x)| <= eps} <= Q * eps by grid fraction.

    Passes when every estimate stays within Q*eps plus the 2/grid slack.
    """
    eps_values = [float(e) for e in eps_values]
    if not eps_values:
        raise ValueError("need at least one epsilon")
    if any(not 0.0 < e < 1.0 for e in eps_values):
        raise ValueError("each epsilon must lie in (0, 1)")
    if f.dim == 1:
        pts = ((np.arange(grid, dtype=np.float64) + 0.5) / grid).reshape(-1, 1)
    else:
        pts = np.random.default_rng(seed).random((grid, f.dim))
    dist = np.abs(M - np.asarray(f.evaluate(pts), dtype=np.float64))
    slack = 2.0 / grid
    rows = []
    worst = -math.inf
    for eps in sorted(eps_values):
        estimate = float(np.count_nonzero(dist <= eps)) / grid
        excess = estimate - Q * eps
        worst = max(worst, excess)
        rows.append({"eps": eps, "estimate": estimate, "bound": Q * eps})
    return ValidationReport(
        check="margin",
        passed=worst <= slack,
        worst_violation=worst,
        slack=slack,
        details={"Q": Q, "M": M, "grid": grid, "per_eps": rows},
    )


# ---------------------------------------------------------------------------
# Divergences
# ---------------------------------------------------------------------------


def bernoulli_kl(p, q):
    """KL divergence between Bernoulli(p) and Bernoulli(q), elementwise.

    Endpoint arguments are rejected; the divergence is only finite on the
    open interval.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if np.any(p <= 0.0) or np.any(p >= 1.0) or np.any(q <= 0.0) or np.any(q >= 1.0):
        raise ValueError("Bernoulli parameters must lie strictly inside (0, 1)")
    out = p * np.log(p / q) + (1.0 - p) * np.log((1.0 - p) / (1.0 - q))
    # the divergence is nonnegative; clamp the few-ulp rounding residue
    # that appears when p and q nearly coincide
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


def instance_kl(pair: InstancePair, arms: ArmSet) -> float:
    """Sum of per-arm Bernoulli KL divergences between the two members,
    over the arms where they disagree."""
    if arms.dim != 1:
        raise ValueError("instance KL requires one-dimensional covariates")
    if arms.origin != GRID:
        raise ValueError("instance KL requires grid covariates")
    x = arms.x
    v0 = pair.m0.evaluate(x)
    v1 = pair.m1.evaluate(x)
    mask = v0 != v1
    if not np.any(mask):
        return 0.0
    return float(np.sum(bernoulli_kl(v0[mask], v1[mask])))
