"""Log-log fits: single power laws and the feature/kernel transition in width sweeps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PowerLawFit:
    """y ~ exp(log_prefactor) * x**exponent, fitted by least squares on (ln x, ln y)."""

    exponent: float
    log_prefactor: float
    r_squared: float
    fit_range: tuple[float, float]
    n_points: int

    def predict(self, x) -> np.ndarray:
        return np.exp(self.log_prefactor) * np.asarray(x, dtype=np.float64) ** self.exponent


def _r_squared(y: np.ndarray, resid: np.ndarray) -> float:
    ss_res = float(resid @ resid)
    centered = y - y.mean()
    ss_tot = float(centered @ centered)
    if ss_tot <= 1e-30 * max(1.0, float(y @ y)):
        # a flat target is fitted exactly by a zero slope
        return 1.0 if ss_res <= 1e-24 * max(1.0, float(y @ y)) else 0.0
    return min(max(1.0 - ss_res / ss_tot, 0.0), 1.0)


def fit_power_law(x, y, fit_range: tuple[float, float] | None = None) -> PowerLawFit:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D arrays of equal length")
    if fit_range is not None:
        lo, hi = fit_range
        mask = (x >= lo) & (x <= hi)
        x, y = x[mask], y[mask]
    if x.size < 3:
        raise ValueError(f"need at least 3 points to fit a power law, got {x.size}")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("power-law fit needs strictly positive x and y")
    u, v = np.log(x), np.log(y)
    design = np.column_stack([np.ones_like(u), u])
    coef, *_ = np.linalg.lstsq(design, v, rcond=None)
    resid = v - design @ coef
    return PowerLawFit(
        exponent=float(coef[1]),
        log_prefactor=float(coef[0]),
        r_squared=_r_squared(v, resid),
        fit_range=(float(x.min()), float(x.max())),
        n_points=int(x.size),
    )


@dataclass(frozen=True)
class TransitionReport:
    detected: bool
    breakpoint_width: float | None
    alpha_gamma: float
    post_break_slope: float
    alpha_beta: float | None
    alpha_beta_r_squared: float | None
    gamma_infinity: float | None
    sse_single: float
    sse_two_segment: float
    improvement: float
    candidate_width: float

    @property
    def reason(self) -> str:
        if self.detected:
            return f"transition at width {self.breakpoint_width:g}"
        return "no transition detected"


def _hinge_fit(u: np.ndarray, v: np.ndarray, knot: float) -> tuple[float, float, float]:
    """Continuous two-segment line with a kink at ``knot``; returns (sse, pre_slope, post_slope)."""
    design = np.column_stack([np.ones_like(u), np.minimum(u - knot, 0.0), np.maximum(u - knot, 0.0)])
    coef, *_ = np.linalg.lstsq(design, v, rcond=None)
    resid = v - design @ coef
    return float(resid @ resid), float(coef[1]), float(coef[2])


def detect_transition(
    widths,
    gamma_min,
    beta,
    *,
    min_improvement: float = 0.2,
    max_post_slope: float = 0.1,
    beta_fit_range: tuple[float, float] | None = None,
) -> TransitionReport:
    """Locate where the effective rank stops growing as a power law in width.

    A continuous two-segment line is fitted to (ln width, ln Gamma) with the kink
    at each interior sweep point; the kink with the smallest SSE wins. The
    transition is accepted when it cuts the single-line SSE by at least
    ``min_improvement`` and the post-kink slope is flatter than
    ``max_post_slope``. The trace-ratio exponent is fitted over widths at or
    above the kink (or ``beta_fit_range`` when given).
    """
    w = np.asarray(widths, dtype=np.float64)
    g = np.asarray(gamma_min, dtype=np.float64)
    b = np.asarray(beta, dtype=np.float64)
    if not (w.shape == g.shape == b.shape) or w.ndim != 1:
        raise ValueError("widths, gamma_min and beta must be aligned 1-D arrays")
    if w.size < 5:
        raise ValueError(f"transition detection needs at least 5 sweep points, got {w.size}")
    if np.any(np.diff(w) <= 0):
        raise ValueError("widths must be strictly increasing")
    if np.any(w <= 0) or np.any(g <= 0):
        raise ValueError("widths and effective ranks must be positive")

    u, v = np.log(w), np.log(g)
    single = fit_power_law(w, g)
    sse_single = float(np.sum((v - (single.log_prefactor + single.exponent * u)) ** 2))

    best = None
    for i in range(1, w.size - 1):
        sse, pre, post = _hinge_fit(u, v, u[i])
        if best is None or sse < best[0]:
            best = (sse, pre, post, i)
    sse2, pre, post, idx = best
    improvement = (sse_single - sse2) / sse_single if sse_single > 0.0 else 0.0
    detected = sse_single > 0.0 and improvement >= min_improvement and abs(post) < max_post_slope
    knot = float(w[idx])

    if beta_fit_range is None:
        beta_fit_range = (knot, float(w[-1])) if detected else (float(w[0]), float(w[-1]))
    in_range = (w >= beta_fit_range[0]) & (w <= beta_fit_range[1]) & (b > 0)
    alpha_beta = r2_beta = None
    if in_range.sum() >= 3:
        fit = fit_power_law(w[in_range], b[in_range])
        alpha_beta, r2_beta = fit.exponent, fit.r_squared

    return TransitionReport(
        detected=bool(detected),
        breakpoint_width=knot if detected else None,
        alpha_gamma=pre,
        post_break_slope=post,
        alpha_beta=alpha_beta,
        alpha_beta_r_squared=r2_beta,
        gamma_infinity=float(g[idx:].mean()) if detected else None,
        sse_single=sse_single,
        sse_two_segment=sse2,
        improvement=float(improvement),
        candidate_width=knot,
    )
