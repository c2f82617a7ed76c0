"""Levenberg-Marquardt fitting of the vertical channel coefficients ``(a, b, e)``."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .channel_models import VerticalChannelParams, vertical_response, vertical_response_gradient
from .traces import TimeSeries

__all__ = [
    "FitConfig",
    "FitResult",
    "fit_vertical_model",
    "fit_arrays",
    "average_fit",
    "default_initial_guess",
    "lm_step",
]

log = logging.getLogger(__name__)

MIN_SAMPLES = 4


@dataclass(frozen=True)
class FitConfig:
    """Control constants for the damped Gauss-Newton iteration.

    ``initial_guess=None`` derives a starting point from the trace itself
    (see :func:`default_initial_guess`). ``lower_bounds`` is applied by
    projection after every trial step.
    """

    initial_guess: tuple | None = None
    max_iterations: int = 200
    cost_tolerance: float = 1e-10
    step_tolerance: float = 1e-10
    initial_damping: float = 1e-3
    damping_up_factor: float = 10.0
    damping_down_factor: float = 0.1
    lower_bounds: tuple = (1e-12, 1e-12, 0.0)
    max_damping: float = 1e16

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        for name in ("cost_tolerance", "step_tolerance", "initial_damping"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not self.damping_up_factor > 1.0 > self.damping_down_factor > 0.0:
            raise ValueError("damping factors must satisfy up > 1 > down > 0")
        lb = tuple(self.lower_bounds)
        if len(lb) != 3 or not (lb[0] > 0 and lb[1] > 0 and lb[2] >= 0):
            raise ValueError("lower_bounds must be (a > 0, b > 0, e >= 0)")
        if self.initial_guess is not None and len(self.initial_guess) != 3:
            raise ValueError("initial_guess must be a triple (a, b, e)")


@dataclass(frozen=True)
class FitResult:
    params: VerticalChannelParams
    residual_sum_of_squares: float
    iterations: int
    converged: bool
    per_iteration_cost: tuple
    message: str = ""

    def as_dict(self):
        return {
            "a": self.params.a,
            "b": self.params.b,
            "e": self.params.e,
            "rss": self.residual_sum_of_squares,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def default_initial_guess(t, y, distance):
    """Starting point from the observed peak, inverting the e=0 peak formula."""
    i = int(np.argmax(y))
    t_peak, v_max = float(t[i]), float(y[i])
    if v_max <= 0:
        v_max = float(np.max(np.abs(y))) or 1.0
    return (v_max * np.sqrt(t_peak), t_peak / (2.0 * distance**2), 0.01)


def lm_step(jac, resid, damping):
    """Solve ``(J^T J + damping * diag(J^T J)) step = J^T r``.

    ``damping=0`` gives the Gauss-Newton step; as damping grows the step
    turns toward ``diag(J^T J)^-1 J^T r``, the scaled steepest-descent
    direction.
    """
    jtj = jac.T @ jac
    grad = jac.T @ resid
    diag = np.diag(jtj).copy()
    # floor keeps the scaling matrix invertible when a column vanishes
    diag = np.maximum(diag, np.finfo(float).eps * max(diag.max(), 1e-300))
    return np.linalg.solve(jtj + damping * np.diag(diag), grad)


def _prepare(t, y):
    t = np.asarray(t, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if t.shape != y.shape:
        raise ValueError(f"t and y differ in length: {t.size} vs {y.size}")
    if t.size < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples to fit, got {t.size}")
    if np.any(t <= 0):
        raise ValueError("all timestamps must be > 0 to fit the vertical model")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
        raise ValueError("trace contains non-finite samples")
    # canonical order, so any permutation of the samples fits identically
    order = np.lexsort((y, t))
    return t[order], y[order]


def fit_arrays(t, y, distance, cfg: FitConfig | None = None) -> FitResult:
    """Fit ``(a, b, e)`` to samples ``y`` observed at times ``t``."""
    cfg = cfg or FitConfig()
    if not distance > 0:
        raise ValueError(f"distance must be > 0, got {distance}")
    t, y = _prepare(t, y)
    lower = np.asarray(cfg.lower_bounds, dtype=float)

    x0 = cfg.initial_guess if cfg.initial_guess is not None else default_initial_guess(t, y, distance)
    x = np.maximum(np.asarray(x0, dtype=float), lower)

    def params_of(coef):
        return VerticalChannelParams(coef[0], coef[1], coef[2], distance)

    def residual(coef):
        return y - vertical_response(params_of(coef), t)

    r = residual(x)
    cost = float(r @ r)
    costs = [cost]
    damping = cfg.initial_damping
    converged = False
    message = "iteration budget exhausted"
    jac = vertical_response_gradient(params_of(x), t)
    it = 0
    while it < cfg.max_iterations:
        it += 1
        try:
            step = lm_step(jac, r, damping)
        except np.linalg.LinAlgError:
            step = None
        if step is not None and np.all(np.isfinite(step)):
            trial = np.maximum(x + step, lower)
            taken = trial - x
            if np.linalg.norm(taken) <= cfg.step_tolerance * (np.linalg.norm(x) + cfg.step_tolerance):
                converged, message = True, "step tolerance reached"
                break
            r_trial = residual(trial)
            cost_trial = float(r_trial @ r_trial)
        else:
            cost_trial = np.inf

        if cost_trial < cost:
            rel_drop = (cost - cost_trial) / cost
            x, r, cost = trial, r_trial, cost_trial
            costs.append(cost)
            damping = max(damping * cfg.damping_down_factor, 1e-15)
            if rel_drop <= cfg.cost_tolerance:
                converged, message = True, "cost tolerance reached"
                break
            jac = vertical_response_gradient(params_of(x), t)
        else:
            damping *= cfg.damping_up_factor
            if damping > cfg.max_damping:
                message = "damping escalation exhausted without decreasing the cost"
                break

    if cost == 0.0 and not converged:
        converged, message = True, "exact fit"
    log.debug("fit finished after %d iterations: %s (rss=%.3e)", it, message, cost)
    return FitResult(params_of(x), cost, it, converged, tuple(costs), message)


def fit_vertical_model(trace: TimeSeries, distance, cfg: FitConfig | None = None) -> FitResult:
    """Least-squares fit of the vertical model to ``trace`` at fixed ``distance``."""
    return fit_arrays(trace.t, trace.values, distance, cfg)


def average_fit(results) -> VerticalChannelParams:
    """Arithmetic mean of per-trial coefficients."""
    results = list(results)
    if not results:
        raise ValueError("no fit results to average")
    distances = {res.params.distance for res in results}
    if len(distances) > 1:
        raise ValueError(f"fit results use different distances: {sorted(distances)}")
    bad = [i for i, res in enumerate(results) if not res.converged]
    if bad:
        raise ValueError(f"results {bad} did not converge")
    coef = np.mean([res.params.coefficients for res in results], axis=0)
    return results[0].params.with_coefficients(coef)
