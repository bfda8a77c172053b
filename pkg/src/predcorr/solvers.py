"""Correction loop, prediction rules, and the solver driver.

Every algorithm here follows the same per-step template: incur the loss at
the entering point, correct it with plain gradient steps on the freshly
revealed objective, then predict a starting point for the not-yet-revealed
next objective.  The four named algorithms differ only in the prediction:

TVGD      no prediction (the corrected point carries over)
UFOPC     inner gradient loop on a quadratic model of the next objective
FOA_MIN   normalized gradient step of fixed length zeta*h
CP        closed-form minimizer of the quadratic model along the
          (possibly extrapolated) gradient direction within radius zeta*h
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Array, MissingOracleError, ProblemOracle, TimeGrid, require

TVGD = "tvgd"
UFOPC = "ufopc"
FOA_MIN = "foa_min"
CP = "cp"
ALGORITHMS = (TVGD, UFOPC, FOA_MIN, CP)

G_PLAIN = "plain"
G_EXTRAPOLATED = "extrapolated"
G_CHOICES = (G_PLAIN, G_EXTRAPOLATED)


class DivergenceError(RuntimeError):
    """An iterate left the domain guard or became non-finite."""


@dataclass(frozen=True)
class SolverConfig:
    """Algorithm selector plus every tunable the four algorithms use.

    Fields irrelevant to the selected algorithm are validated but ignored.

    algorithm  one of {tvgd, ufopc, foa_min, cp}
    C          correction steps per time step (>= 0)
    beta       correction step size (> 0)
    P          prediction inner steps, UFOPC only (>= 0)
    alpha      prediction step size, UFOPC only (> 0)
    gamma      UFOPC mixing weight on the current gradient, in [0, 1]
    zeta       prediction radius coefficient (> 0); step length is zeta*h
    delta      small-gradient guard (> 0): no prediction below this norm
    g_choice   "plain" uses the current gradient; "extrapolated" uses
               2*grad(x, t) - grad(x, t - h)
    """

    algorithm: str
    C: int = 1
    beta: float = 1.0
    P: int = 0
    alpha: float = 1.0
    gamma: float = 0.0
    zeta: float = 1.0
    delta: float = 1e-10
    g_choice: str = G_PLAIN
    name: str = ""

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.C < 0:
            raise ValueError("C must be >= 0")
        if not self.beta > 0:
            raise ValueError("beta must be > 0")
        if self.P < 0:
            raise ValueError("P must be >= 0")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not self.zeta > 0:
            raise ValueError("zeta must be > 0")
        if not self.delta > 0:
            raise ValueError("delta must be > 0")
        if self.g_choice not in G_CHOICES:
            raise ValueError(f"unknown g_choice {self.g_choice!r}; expected one of {G_CHOICES}")

    @property
    def label(self) -> str:
        return self.name or self.algorithm


@dataclass
class Trace:
    """Per-step record of one solver run.

    Row k describes time ``t_k``: the entering (predicted) iterate, the loss
    and gradient norm incurred there, the corrected iterate, and the wall
    clock spent correcting at ``t_k`` and predicting for ``t_{k+1}``.
    For TVGD the entering iterate of step k+1 is the corrected iterate of
    step k, so the identity prediction makes the trace layout uniform.
    ``gap`` is ``f(entering; t_k) - f*(t_k)`` when an optimum oracle was
    consulted, else None.  A diverged run is truncated at the step where the
    divergence was detected.
    """

    t: Array
    f_pred: Array
    grad_norm: Array
    gap: Optional[Array]
    pred_seconds: Array
    corr_seconds: Array
    x_pred: Optional[Array]
    x_corr: Optional[Array]
    diverged: bool = False
    diverged_step: Optional[int] = None
    algorithm: str = ""
    label: str = ""

    def __len__(self) -> int:
        return len(self.t)


def correct(problem: ProblemOracle, x: Array, t: float, C: int, beta: float) -> Array:
    """Apply C plain gradient-descent steps on ``f(.; t)`` starting at x.

    C = 0 returns x unchanged.  The gradient is re-evaluated at every inner
    iterate.  Raises :class:`DivergenceError` if any coordinate becomes
    non-finite.
    """
    if C < 0:
        raise ValueError("C must be >= 0")
    for _ in range(C):
        x = x - beta * problem.grad_x(x, t)
        if not np.all(np.isfinite(x)):
            raise DivergenceError("correction produced a non-finite iterate")
    return x


def predict_foa_min(g: Array, x: Array, zeta: float, h: float, delta: float) -> Array:
    """Normalized gradient step of length exactly zeta*h.

    Returns x unchanged when ||g|| <= delta (no reliable direction).
    """
    gn = float(np.linalg.norm(g))
    if gn <= delta:
        return x
    return x - (zeta * h / gn) * g


def predict_cauchy_point(
    g: Array, H: Array, x: Array, zeta: float, h: float, delta: float
) -> Array:
    """Minimize the quadratic model along -g within the radius zeta*h.

    With curvature q = g'Hg along the direction, the unconstrained minimizer
    sits at arc length ||g||^3 / q; nonpositive q (including exactly zero)
    means the model decreases all the way to the boundary, so the full step
    is taken.  Returns x unchanged when ||g|| <= delta.
    """
    gn = float(np.linalg.norm(g))
    if gn <= delta:
        return x
    q = float(g @ (H @ g))
    if q <= 0.0:
        s = zeta * h
    else:
        s = min(gn**3 / q, zeta * h)
    return x - (s / gn) * g


def predict_ufopc(
    problem: ProblemOracle,
    x: Array,
    t: float,
    h: float,
    P: int,
    alpha: float,
    gamma: float,
) -> Array:
    """Inner gradient loop on a quadratic model of the next objective.

    Runs P steps of

        z <- z - alpha * (H (z - x) + h * dtg + gamma * g)

    with H and g frozen at (x, t) and the mixed time-space derivative dtg
    approximated by the backward gradient difference
    ``(grad(x, t) - grad(x, t - h)) / h``.  The objectives in this suite are
    defined for all real times, so the first step (t = 0) evaluates at -h
    like every other step.

    There is deliberately no divergence guard inside the loop: on indefinite
    H the iteration can run away, and reproducing that instability is part
    of the algorithm's observable behavior.  The caller detects non-finite
    or out-of-guard results.
    """
    require(problem, "hess_xx")
    if P == 0:
        return x
    g = np.asarray(problem.grad_x(x, t), dtype=float)
    dtg = (g - np.asarray(problem.grad_x(x, t - h), dtype=float)) / h
    H = np.asarray(problem.hess_xx(x, t), dtype=float)
    forcing = h * dtg + gamma * g
    z = x
    for _ in range(P):
        z = z - alpha * (H @ (z - x) + forcing)
        if not np.all(np.isfinite(z)):
            break
    return z


def g_select(
    problem: ProblemOracle,
    x: Array,
    t: float,
    h: float,
    choice: str,
    prev_grad: Optional[Array] = None,
    first_step: bool = False,
) -> Array:
    """Return the prediction direction vector for FOA_MIN / CP.

    "plain" is the current gradient.  "extrapolated" is
    ``2*grad(x, t) - grad(x, t - h)``, a one-step linear extrapolation of
    the gradient to the next time; ``prev_grad``, when given, stands in for
    ``grad(x, t - h)``.  On the first step there is no previous time, so
    "extrapolated" falls back to "plain".
    """
    g = np.asarray(problem.grad_x(x, t), dtype=float)
    if choice == G_PLAIN or first_step:
        return g
    if choice != G_EXTRAPOLATED:
        raise ValueError(f"unknown g_choice {choice!r}")
    if prev_grad is None:
        prev_grad = np.asarray(problem.grad_x(x, t - h), dtype=float)
    return 2.0 * g - prev_grad


def _required_oracles(config: SolverConfig) -> tuple[str, ...]:
    if config.algorithm in (UFOPC, CP):
        return ("hess_xx",)
    return ()


def run(
    problem: ProblemOracle,
    config: SolverConfig,
    grid: TimeGrid,
    x0: Array,
    compute_gap: Optional[bool] = None,
    store_iterates: bool = True,
) -> Trace:
    """Execute the incur-correct-predict loop over the whole time grid.

    compute_gap:
        None   record gaps when a closed-form optimum oracle exists
        True   record gaps, running the numeric optimum oracle if needed
        False  never record gaps
    store_iterates:
        keep per-step entering/corrected iterates in the trace (disable for
        long sweeps to bound memory).

    The run stops early, with the diverged flag set, as soon as an entering
    iterate is non-finite or leaves the domain guard, or the correction
    produces a non-finite point.  Missing required oracles raise
    :class:`MissingOracleError` before the first step.
    """
    for oracle in _required_oracles(config):
        if getattr(problem, oracle) is None:
            raise MissingOracleError(
                f"algorithm {config.algorithm!r} needs oracle {oracle!r} "
                f"which problem {problem.name!r} does not provide"
            )
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (problem.dim,):
        raise ValueError(f"x0 has shape {x0.shape}, expected ({problem.dim},)")

    if compute_gap is None:
        want_gap = problem.optimum is not None and problem.optimum_kind == "closed_form"
    elif compute_gap:
        require(problem, "optimum")
        want_gap = True
    else:
        want_gap = False

    n = grid.steps
    t_arr = np.empty(n)
    f_arr = np.empty(n)
    gn_arr = np.empty(n)
    gap_arr = np.empty(n) if want_gap else None
    pred_s = np.zeros(n)
    corr_s = np.zeros(n)
    xp_arr = np.empty((n, problem.dim)) if store_iterates else None
    xc_arr = np.empty((n, problem.dim)) if store_iterates else None

    algo = config.algorithm
    h = grid.h
    guard = problem.domain_guard
    if guard is None:
        guard = 1e8 * (1.0 + float(np.linalg.norm(x0)))
    perf = time.perf_counter

    x_in = x0.copy()
    diverged_at: Optional[int] = None
    k = 0
    for k in range(n):
        t = grid.t(k)
        t_arr[k] = t
        if xp_arr is not None:
            xp_arr[k] = x_in
            xc_arr[k] = x_in
        finite_entry = bool(np.all(np.isfinite(x_in)))
        if not finite_entry or np.linalg.norm(x_in) > guard:
            with np.errstate(all="ignore"):
                f_arr[k] = problem.value(x_in, t) if finite_entry else np.nan
                gn_arr[k] = (
                    np.linalg.norm(problem.grad_x(x_in, t)) if finite_entry else np.nan
                )
            if gap_arr is not None:
                gap_arr[k] = np.nan
            diverged_at = k
            break

        f_arr[k] = problem.value(x_in, t)
        g_in = problem.grad_x(x_in, t)
        gn_arr[k] = np.linalg.norm(g_in)
        if not (np.isfinite(f_arr[k]) and np.isfinite(gn_arr[k])):
            if gap_arr is not None:
                gap_arr[k] = np.nan
            diverged_at = k
            break
        if gap_arr is not None:
            _, f_star = problem.optimum(t, x_in)
            gap_arr[k] = f_arr[k] - f_star

        t0 = perf()
        try:
            x_c = correct(problem, x_in, t, config.C, config.beta)
        except DivergenceError:
            corr_s[k] = perf() - t0
            if xc_arr is not None:
                xc_arr[k] = np.nan
            diverged_at = k
            break
        corr_s[k] = perf() - t0
        if xc_arr is not None:
            xc_arr[k] = x_c
        if np.linalg.norm(x_c) > guard:
            diverged_at = k
            break

        t0 = perf()
        if algo == TVGD:
            x_next = x_c
        elif algo == UFOPC:
            x_next = predict_ufopc(problem, x_c, t, h, config.P, config.alpha, config.gamma)
        else:
            g_k = g_select(
                problem, x_c, t, h, config.g_choice, first_step=(k == 0)
            )
            if algo == FOA_MIN:
                x_next = predict_foa_min(g_k, x_c, config.zeta, h, config.delta)
            else:
                H_k = np.asarray(problem.hess_xx(x_c, t), dtype=float)
                x_next = predict_cauchy_point(g_k, H_k, x_c, config.zeta, h, config.delta)
        pred_s[k] = perf() - t0
        x_in = x_next

    end = n if diverged_at is None else diverged_at + 1

    def cut(a):
        return a[:end] if a is not None else None

    return Trace(
        t=t_arr[:end],
        f_pred=f_arr[:end],
        grad_norm=gn_arr[:end],
        gap=cut(gap_arr),
        pred_seconds=pred_s[:end],
        corr_seconds=corr_s[:end],
        x_pred=cut(xp_arr),
        x_corr=cut(xc_arr),
        diverged=diverged_at is not None,
        diverged_step=diverged_at,
        algorithm=algo,
        label=config.label,
    )
