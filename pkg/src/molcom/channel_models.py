"""Closed-form channel responses for molecular communication via diffusion.

Two models live here:

* the free-diffusion pulse response of an instantaneous point release,
  ``M / (4 pi D t)^(n/2) * exp(-d^2 / (4 D t))``;
* the vertical channel model, a 1-D diffusion shape with a linear loss term
  lumping gravity and medium flow, ``a / sqrt(t) * exp(-b d^2 / t) - e t``.

All functions are pure. Time arguments may be scalars or arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "DiffusionParams",
    "VerticalChannelParams",
    "KinematicsParams",
    "PeakNotFoundError",
    "diffusion_response",
    "vertical_response",
    "vertical_response_gradient",
    "peak_time",
    "zero_crossing_time",
    "uniform_acceleration_velocity",
    "golden_section_max",
]

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
INV_PHI_SQ = (3.0 - math.sqrt(5.0)) / 2.0


class PeakNotFoundError(RuntimeError):
    """The peak search did not settle on an interior maximum."""


def _check_time(t, *, allow_zero=False):
    arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("time must be finite")
    if allow_zero:
        if np.any(arr < 0):
            raise ValueError("time must be >= 0")
    elif np.any(arr <= 0):
        raise ValueError("time must be > 0; the channel models are undefined at t <= 0")
    return arr


def _scalar_or_array(value, like):
    if np.ndim(like) == 0:
        return float(value)
    return value


@dataclass(frozen=True)
class DiffusionParams:
    """Parameters of the free-diffusion pulse response.

    ``distance`` is in cm and ``diffusion_coefficient`` in cm^2/s.
    """

    molecule_count: float = 1.0
    diffusion_coefficient: float = 0.0993
    dimension: int = 1
    distance: float = 10.0

    def __post_init__(self):
        if not self.molecule_count > 0:
            raise ValueError(f"molecule_count must be > 0, got {self.molecule_count}")
        if not self.diffusion_coefficient > 0:
            raise ValueError(
                f"diffusion_coefficient must be > 0, got {self.diffusion_coefficient}"
            )
        if self.dimension not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.dimension}")
        if not self.distance >= 0:
            raise ValueError(f"distance must be >= 0, got {self.distance}")


@dataclass(frozen=True)
class VerticalChannelParams:
    """Coefficients ``(a, b, e)`` of the vertical model plus the fixed distance.

    ``a`` plays the role of ``M / sqrt(4 pi D)`` and ``b`` of ``1 / (4 D)``;
    these correspondences are informative only and never enforced.
    """

    a: float
    b: float
    e: float
    distance: float

    def __post_init__(self):
        for name in ("a", "b", "e", "distance"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.a > 0:
            raise ValueError(f"a must be > 0, got {self.a}")
        if not self.b > 0:
            raise ValueError(f"b must be > 0, got {self.b}")
        if not self.e >= 0:
            raise ValueError(f"e must be >= 0, got {self.e}")
        if not self.distance > 0:
            raise ValueError(f"distance must be > 0, got {self.distance}")
        for name in ("a", "b", "e", "distance"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def coefficients(self):
        return np.array([self.a, self.b, self.e])

    def with_coefficients(self, coef):
        a, b, e = (float(c) for c in coef)
        return VerticalChannelParams(a, b, e, self.distance)


@dataclass(frozen=True)
class KinematicsParams:
    initial_velocity: float = 0.0
    acceleration: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.initial_velocity) and math.isfinite(self.acceleration)):
            raise ValueError("kinematics parameters must be finite")


def diffusion_response(p: DiffusionParams, t):
    """Concentration at ``p.distance`` and time ``t`` after a point release."""
    t = _check_time(t)
    four_dt = 4.0 * p.diffusion_coefficient * t
    out = p.molecule_count / (math.pi * four_dt) ** (p.dimension / 2.0) * np.exp(
        -(p.distance**2) / four_dt
    )
    return _scalar_or_array(out, t)


def _diffusion_part(a, b, d, t):
    return a / np.sqrt(t) * np.exp(-b * d * d / t)


def vertical_response(p: VerticalChannelParams, t):
    """Vertical channel signal at ``t``; raw signed value, never clipped."""
    t = _check_time(t)
    out = _diffusion_part(p.a, p.b, p.distance, t) - p.e * t
    return _scalar_or_array(out, t)


def vertical_response_gradient(p: VerticalChannelParams, t):
    """Partial derivatives of the vertical response w.r.t. ``(a, b, e)``.

    Returns a tuple of three scalars for scalar ``t``, or an ``(n, 3)``
    Jacobian for array ``t``.
    """
    t = _check_time(t)
    d2 = p.distance * p.distance
    shape = np.exp(-p.b * d2 / t) / np.sqrt(t)
    da = shape
    db = -p.a * d2 / t * shape
    de = -t
    if np.ndim(t) == 0:
        return float(da), float(db), float(de)
    return np.column_stack([da, db, de])


def golden_section_max(f, lo, hi, tol=1e-6, max_iter=200):
    """Golden-section search for the maximum of a unimodal ``f`` on ``[lo, hi]``.

    Returns ``(x, converged)`` where ``x`` is the midpoint of the final bracket.
    """
    a, b = min(lo, hi), max(lo, hi)
    h = b - a
    c = a + INV_PHI_SQ * h
    d = a + INV_PHI * h
    fc = f(c)
    fd = f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            return 0.5 * (a + b), True
        if fc > fd:
            b, d, fd = d, c, fc
            h = INV_PHI * h
            c = a + INV_PHI_SQ * h
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            h = INV_PHI * h
            d = a + INV_PHI * h
            fd = f(d)
    return 0.5 * (a + b), b - a <= tol


def _slope(p, t):
    # d/dt of the vertical response
    c = p.b * p.distance**2
    return p.a * math.exp(-c / t) * t**-2.5 * (c - 0.5 * t) - p.e


def peak_time(p: VerticalChannelParams, *, tol=1e-6, max_iter=200):
    """Time of the maximum of the vertical response.

    Golden-section search on ``(1e-6, max(20 b d^2, 100)]`` locates the
    peak; a bracketed root solve on the time derivative then polishes it to
    machine precision, since function comparisons alone stall near
    ``sqrt(eps)`` relative accuracy on a flat maximum.
    """
    c = p.b * p.distance**2
    lo, hi = 1e-6, max(10.0 * 2.0 * c, 100.0)
    t_gss, ok = golden_section_max(lambda t: vertical_response(p, t), lo, hi, tol, max_iter)
    if not ok:
        raise PeakNotFoundError(f"golden-section search did not reach tol={tol} in {max_iter} steps")

    # interior maximum: slope goes from + to - across the peak
    step = max(4.0 * tol, 1e-3 * t_gss)
    for _ in range(60):
        left, right = max(t_gss - step, lo), min(t_gss + step, hi)
        if _slope(p, left) > 0.0 and _slope(p, right) < 0.0:
            break
        step *= 2.0
    else:
        raise PeakNotFoundError("no interior maximum: the loss term dominates at all t > 0")
    return brentq(lambda t: _slope(p, t), left, right, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def zero_crossing_time(p: VerticalChannelParams, *, tol=1e-12, max_iter=200):
    """First time after the peak at which the vertical response reaches zero.

    Only defined for ``e > 0``; found by plain bisection.
    """
    if p.e <= 0.0:
        raise ValueError("the response stays positive when e == 0")
    lo = peak_time(p)
    if vertical_response(p, lo) <= 0.0:
        raise PeakNotFoundError("response is non-positive at its peak")
    hi = 2.0 * lo
    while vertical_response(p, hi) > 0.0:
        hi *= 2.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if vertical_response(p, mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            break
    return 0.5 * (lo + hi)


def uniform_acceleration_velocity(k: KinematicsParams, t):
    t = _check_time(t, allow_zero=True)
    return _scalar_or_array(k.initial_velocity + k.acceleration * t, t)
