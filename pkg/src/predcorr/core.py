"""Time grid, problem oracles, and oracle-validation utilities.

A time-varying problem is a family of smooth objectives ``f(x; t)`` revealed
one sampling period at a time.  Everything downstream (solvers, benchmarks,
bound checkers) talks to a :class:`ProblemOracle`, which bundles the value,
gradient, and optional higher-order oracles behind plain callables.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

Array = np.ndarray

# Gradient norms below this are treated as exactly stationary when forming
# derivative ratios.
STATIONARY_EPS = 1e-12


def rng_from_seed(seed: int) -> np.random.Generator:
    """Return the package-wide seeded generator.

    Uses the Philox4x64-10 counter-based bit generator: the algorithm is
    published, has no hidden state beyond (key, counter), and produces the
    same stream on every platform, so seeded experiments reproduce exactly.
    """
    return np.random.Generator(np.random.Philox(key=seed))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform sampling grid: step k happens at time ``k * h``.

    ``t(k)`` is always computed as the single product ``k * h`` rather than
    by repeated addition, so grid times carry no accumulated rounding drift
    and are bit-identical across runs and platforms.
    """

    h: float
    steps: int

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"sampling period must be positive, got {self.h}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be an integer >= 1, got {self.steps}")

    def t(self, k: int) -> float:
        return k * self.h

    def times(self) -> Array:
        """All step times ``0, h, 2h, ..., (steps-1)h``."""
        return np.arange(self.steps) * self.h

    @property
    def horizon(self) -> float:
        return self.steps * self.h


@dataclass(frozen=True)
class ProblemOracle:
    """Callable bundle describing one time-varying objective.

    Required pieces are the dimension, ``value`` and ``grad_x``.  The rest
    are optional and simply absent (``None``) for problems that cannot
    supply them; solvers that need a missing oracle refuse to run.

    value(x, t)    -> float                objective f(x; t)
    grad_x(x, t)   -> (d,) array           spatial gradient
    grad_t(x, t)   -> float                time derivative (optional)
    hess_xx(x, t)  -> (d, d) array         symmetric Hessian (optional)
    optimum(t, x_hint=None) -> (x*, f*)    reference optimum (optional);
        ``optimum_kind`` says whether it is "closed_form" or "numeric"
        (an inner solver started from ``x_hint``).

    Iterates whose norm exceeds ``domain_guard`` are declared diverged by
    the solver loop; problems that leave it unset get the run-time default
    ``1e8 * (1 + ||x0||)``.  Oracles are pure functions of (x, t); instances
    are immutable and safe to share between concurrent runs.
    """

    dim: int
    value: Callable[[Array, float], float]
    grad_x: Callable[[Array, float], Array]
    grad_t: Optional[Callable[[Array, float], float]] = None
    hess_xx: Optional[Callable[[Array, float], Array]] = None
    optimum: Optional[Callable[..., tuple[Array, float]]] = None
    optimum_kind: Optional[str] = None
    domain_guard: Optional[float] = None
    name: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.optimum is not None and self.optimum_kind not in ("closed_form", "numeric"):
            raise ValueError("optimum oracle requires optimum_kind 'closed_form' or 'numeric'")


@dataclass(frozen=True)
class ProblemConstants:
    """Smoothness/curvature constants used by the empirical bound checkers.

    L1     bound on the spatial Hessian norm
    L2     bound on the mixed time-space derivative norm
    L3     bound on the second time derivative of f - gauge
    G2     time-Lipschitz constant of f - gauge
    mu     PL / strong-convexity constant
    Z      bound on |d/dt (f - gauge)| / ||grad_x f||
    gauge  purely time-dependent offset subtracted from f; defaults to zero
    """

    L1: Optional[float] = None
    L2: Optional[float] = None
    L3: Optional[float] = None
    G2: Optional[float] = None
    mu: Optional[float] = None
    Z: Optional[float] = None
    gauge: Optional[Callable[[float], float]] = None

    def __post_init__(self):
        for name in ("L1", "L2", "L3", "G2", "mu", "Z"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be >= 0, got {v}")
        if self.mu is not None and self.L1 is not None and self.mu > self.L1:
            raise ValueError(f"mu={self.mu} cannot exceed L1={self.L1}")

    @property
    def rho(self) -> float:
        """Per-step contraction factor 1 - mu/L1 of gradient descent."""
        if self.mu is None or self.L1 is None:
            raise ValueError("rho requires both mu and L1")
        return 1.0 - self.mu / self.L1

    def gauge_at(self, t: float) -> float:
        return 0.0 if self.gauge is None else float(self.gauge(t))


def require(problem: ProblemOracle, *oracles: str) -> None:
    """Raise ``MissingOracleError`` unless all named optional oracles exist."""
    missing = [name for name in oracles if getattr(problem, name) is None]
    if missing:
        raise MissingOracleError(
            f"problem '{problem.name or 'unnamed'}' does not provide: {', '.join(missing)}"
        )


class MissingOracleError(ValueError):
    """A solver or checker asked for an oracle the problem does not provide."""


# ---------------------------------------------------------------------------
# Finite-difference validation
# ---------------------------------------------------------------------------

@dataclass
class FDReport:
    """Worst-case relative errors of analytic oracles vs central differences.

    Errors are scaled: ``||analytic - fd|| / (1 + ||analytic||)``.  Absent
    optional oracles are listed in ``absent`` instead of failing the check.
    """

    grad_x_max_rel: float
    grad_t_max_rel: Optional[float]
    hess_xx_max_rel: Optional[float]
    hess_asym_max: Optional[float]
    absent: list[str] = field(default_factory=list)
    samples: int = 0
    seed: int = 0


def _fd_grad(problem: ProblemOracle, x: Array, t: float, step: float) -> Array:
    g = np.empty(problem.dim)
    e = np.zeros(problem.dim)
    for j in range(problem.dim):
        e[j] = step
        g[j] = (problem.value(x + e, t) - problem.value(x - e, t)) / (2 * step)
        e[j] = 0.0
    return g


def _fd_hess(problem: ProblemOracle, x: Array, t: float, step: float) -> Array:
    H = np.empty((problem.dim, problem.dim))
    e = np.zeros(problem.dim)
    for j in range(problem.dim):
        e[j] = step
        H[:, j] = (problem.grad_x(x + e, t) - problem.grad_x(x - e, t)) / (2 * step)
        e[j] = 0.0
    return H


def finite_difference_check(
    problem: ProblemOracle,
    samples: int = 20,
    seed: int = 0,
    x_scale: float = 1.0,
    t_max: float = 10.0,
) -> FDReport:
    """Validate analytic oracles against central finite differences.

    Draws ``samples`` points with ``x ~ x_scale * N(0, I)`` and
    ``t ~ U[0, t_max]`` and differentiates with step ``1e-5 * (1 + ||x||)``
    (``1e-5 * (1 + |t|)`` in time).  Deterministic for a fixed seed.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = rng_from_seed(seed)
    report = FDReport(0.0, None, None, None, samples=samples, seed=seed)

    has_gt = problem.grad_t is not None
    has_h = problem.hess_xx is not None
    if not has_gt:
        report.absent.append("grad_t")
    if not has_h:
        report.absent.append("hess_xx")
    gt_max = 0.0
    h_max = 0.0
    asym = 0.0

    for _ in range(samples):
        x = x_scale * rng.standard_normal(problem.dim)
        t = t_max * rng.random()
        sx = 1e-5 * (1.0 + float(np.linalg.norm(x)))

        g = np.asarray(problem.grad_x(x, t), dtype=float)
        gfd = _fd_grad(problem, x, t, sx)
        rel = np.linalg.norm(g - gfd) / (1.0 + np.linalg.norm(g))
        report.grad_x_max_rel = max(report.grad_x_max_rel, float(rel))

        if has_gt:
            st = 1e-5 * (1.0 + abs(t))
            gt = float(problem.grad_t(x, t))
            gtfd = (problem.value(x, t + st) - problem.value(x, t - st)) / (2 * st)
            gt_max = max(gt_max, abs(gt - gtfd) / (1.0 + abs(gt)))

        if has_h:
            H = np.asarray(problem.hess_xx(x, t), dtype=float)
            Hfd = _fd_hess(problem, x, t, sx)
            h_max = max(h_max, float(np.linalg.norm(H - Hfd) / (1.0 + np.linalg.norm(H))))
            asym = max(asym, float(np.max(np.abs(H - H.T))))

    if has_gt:
        report.grad_t_max_rel = gt_max
    if has_h:
        report.hess_xx_max_rel = h_max
        report.hess_asym_max = asym
    return report


# ---------------------------------------------------------------------------
# Derivative-ratio estimation
# ---------------------------------------------------------------------------

@dataclass
class RatioEstimate:
    """Supremum estimate of |d/dt f| / ||grad_x f|| over sampled points."""

    value: float
    used: int
    skipped: int


def gaussian_sampler(dim: int, x_scale: float = 1.0, t_max: float = 10.0):
    """Sampler drawing ``x ~ x_scale*N(0,I)``, ``t ~ U[0, t_max]``."""

    def sample(rng: np.random.Generator) -> tuple[Array, float]:
        return x_scale * rng.standard_normal(dim), t_max * rng.random()

    return sample


def ball_sampler(dim: int, radius: float, t_max: float = 10.0):
    """Sampler drawing ``x`` uniformly from the ball ``||x|| <= radius``."""

    def sample(rng: np.random.Generator) -> tuple[Array, float]:
        v = rng.standard_normal(dim)
        v /= max(np.linalg.norm(v), STATIONARY_EPS)
        r = radius * rng.random() ** (1.0 / dim)
        return r * v, t_max * rng.random()

    return sample


def estimate_Z(
    problem: ProblemOracle,
    sampler: Callable[[np.random.Generator], tuple[Array, float]],
    samples: int = 1000,
    seed: int = 0,
) -> RatioEstimate:
    """Estimate the derivative-ratio bound sup |d/dt f| / ||grad_x f||.

    The prediction radius coefficient of the normalized-step predictors
    should be set at or above this value.  Points that are numerically
    stationary (gradient norm below 1e-12) are skipped and counted; if every
    sample is skipped the sampled region gives no information and a
    ``ValueError`` is raised.  Adding samples can only increase the estimate.
    """
    require(problem, "grad_t")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = rng_from_seed(seed)
    best = 0.0
    used = 0
    skipped = 0
    for _ in range(samples):
        x, t = sampler(rng)
        gn = float(np.linalg.norm(problem.grad_x(x, t)))
        if gn < STATIONARY_EPS:
            skipped += 1
            continue
        used += 1
        best = max(best, abs(float(problem.grad_t(x, t))) / gn)
    if used == 0:
        raise ValueError(
            f"all {samples} samples were stationary; cannot estimate the derivative ratio"
        )
    return RatioEstimate(value=best, used=used, skipped=skipped)
