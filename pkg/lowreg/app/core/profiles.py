"""
Smooth profiles: quintic smoothstep ramps, radial bumps, the mollifier kernel
and the floor function used by partitions of unity.
"""
from typing import Sequence, Tuple

import numpy as np

from app.core.exprparse import (
    Expr,
    ONE,
    const,
    maximum,
    minimum,
    mul,
    power,
    product_of,
    sub,
    add,
    div,
    var,
    func,
    neg,
    sum_of,
)

# sup of the smoothstep derivative on [0, 1]
SMOOTHSTEP_SLOPE = 15.0 / 8.0


def smoothstep(t: np.ndarray) -> np.ndarray:
    """Quintic smoothstep S(t) = t^3 (6t^2 - 15t + 10), clamped to [0, 1]"""
    t = np.clip(t, 0.0, 1.0)
    return t ** 3 * (t * (6.0 * t - 15.0) + 10.0)


def smoothstep_derivatives(t: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """S, S' and S'' of the clamped smoothstep (derivatives vanish off [0, 1])"""
    inside = (t > 0.0) & (t < 1.0)
    tc = np.clip(t, 0.0, 1.0)
    s = tc ** 3 * (tc * (6.0 * tc - 15.0) + 10.0)
    ds = np.where(inside, 30.0 * tc ** 2 * (1.0 - tc) ** 2, 0.0)
    d2s = np.where(inside, 60.0 * tc * (1.0 - tc) * (1.0 - 2.0 * tc), 0.0)
    return s, ds, d2s


def radial_ramp(r: np.ndarray, inner: float, outer: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Profile equal to 1 for r <= inner and 0 for r >= outer, with its first
    and second derivatives in r.
    """
    width = outer - inner
    s, ds, d2s = smoothstep_derivatives((r - inner) / width)
    return 1.0 - s, -ds / width, -d2s / width ** 2


def smoothstep_expr(u: Expr) -> Expr:
    """Clamped smoothstep of an expression, built from max/min"""
    t = minimum(ONE, maximum(const(0.0), u))
    inner = add(mul(t, sub(mul(const(6.0), t), const(15.0))), const(10.0))
    return mul(power(t, const(3.0)), inner)


def box_cutoff_expr(
    lower: Sequence[float],
    upper: Sequence[float],
    widths: Sequence[float],
) -> Expr:
    """
    Tensor-product cutoff that vanishes outside [lower, upper] and equals 1
    at distance >= width from its faces.
    """
    factors = []
    for axis, (a, b, w) in enumerate(zip(lower, upper, widths), start=1):
        x = var(axis)
        factors.append(smoothstep_expr(div(sub(x, const(a)), const(w))))
        factors.append(smoothstep_expr(div(sub(const(b), x), const(w))))
    return product_of(factors)


def squared_distance_expr(center: Sequence[float]) -> Expr:
    return sum_of([power(sub(var(i + 1), const(c)), const(2.0)) for i, c in enumerate(center)])


def radial_bump_expr(center: Sequence[float], radius: float) -> Expr:
    """
    Radial bump 1 - S(|x - c|^2 / R^2): smooth at the centre, zero outside
    the ball of radius R. Clamped at 0 so rounding never makes it negative.
    """
    return maximum(const(0.0), sub(ONE, smoothstep_expr(div(squared_distance_expr(center), const(radius ** 2)))))


def gaussian_expr(center: Sequence[float], width: float) -> Expr:
    """exp(-|x - c|^2 / w^2)"""
    return func("exp", neg(div(squared_distance_expr(center), const(width ** 2))))


def mollifier_profile(r: np.ndarray) -> np.ndarray:
    """Standard bump exp(-1 / (1 - r^2)) on r < 1, zero elsewhere (unnormalised)"""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = r < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


def floor_function(s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Smooth floor h with h(s) = s for s >= 1, h >= max(|s|, 1/4) and
    |h'| <= 1 on s >= 0. Returns h and h'.
    """
    s = np.asarray(s, dtype=float)
    below = s < 1.0
    gap = np.where(below, 1.0 - s, 0.0)
    value = s + 0.5 * gap ** 3
    slope = 1.0 - 1.5 * gap ** 2
    return value, slope
