"""Sweep-level analysis of persisted records: ensemble tables, loss scaling and the width transition."""

from __future__ import annotations

import math
from dataclasses import asdict

import numpy as np

from .fitting import detect_transition, fit_power_law
from .records import RunRecord
from .runner import group_by_value

TABLE_METRICS = (
    ("min_test_loss", "L_min"),
    ("trace_init", "Tr0"),
    ("trace_ratio", "beta"),
    ("effective_rank_min", "G_min"),
    ("abs_adaptation_rate_min", "|chi|"),
    ("label_alignment_min", "A_min"),
    ("epochs_to_min", "ep_min"),
)


def analyze(records: list[RunRecord]) -> dict:
    """JSON-ready report; NaN becomes None."""
    if not records:
        raise ValueError("no records to analyze")
    axis = records[0].sweep_axis
    ensembles = group_by_value(records)
    report: dict = {
        "config_hash": records[0].config_hash,
        "sweep_axis": axis,
        "n_records": len(records),
        "n_failed": sum(not r.ok for r in records),
        "points": [
            {
                "sweep_value": e.sweep_value,
                "n_ok": len(e.seeds),
                "n_failed": e.n_failed,
                **{m: {"mean": _nan(s.mean), "stderr": _nan(s.stderr), "n": s.n} for m, s in e.stats.items()},
            }
            for e in ensembles
        ],
        "warnings": sorted({w for r in records for w in r.warnings}),
        "loss_scaling": None,
        "transition": None,
    }
    x = np.array([float(e.sweep_value) for e in ensembles])
    loss = np.array([e["min_test_loss"].mean for e in ensembles])
    if axis != "keep_fractions" and x.size >= 3 and np.all(loss > 0):
        fit = fit_power_law(x, loss)
        report["loss_scaling"] = asdict(fit)
    if axis == "widths" and x.size >= 5:
        gamma = np.array([e["effective_rank_min"].mean for e in ensembles])
        beta = np.array([e["trace_ratio"].mean for e in ensembles])
        report["transition"] = {k: _nan(v) for k, v in asdict(detect_transition(x, gamma, beta)).items()}
    return report


def _nan(v):
    return None if isinstance(v, float) and not math.isfinite(v) else v


def format_report(report: dict) -> str:
    lines = [f"config {report['config_hash']}  axis {report['sweep_axis']}  records {report['n_records']}  failed {report['n_failed']}"]
    head = f"{'value':>10} {'n':>3}" + "".join(f" {label:>18}" for _, label in TABLE_METRICS)
    lines.append(head)
    for p in report["points"]:
        cells = []
        for m, _ in TABLE_METRICS:
            s = p[m]
            cells.append(" " * 18 if s["mean"] is None else f" {s['mean']:>9.4g} ±{s['stderr']:<7.2g}")
        lines.append(f"{p['sweep_value']:>10g} {p['n_ok']:>3}" + "".join(cells))
    fit = report.get("loss_scaling")
    if fit:
        lines.append(f"loss scaling: L_min ~ x^{fit['exponent']:.3f}  (r2 = {fit['r_squared']:.3f})")
    tr = report.get("transition")
    if tr:
        if tr["detected"]:
            lines.append(
                f"transition at width {tr['breakpoint_width']:g}: alpha_Gamma = {tr['alpha_gamma']:.3f}, "
                f"post-break slope = {tr['post_break_slope']:.3f}, Gamma_inf = {tr['gamma_infinity']:.3f}"
            )
        else:
            lines.append(f"no transition detected (best candidate {tr['candidate_width']:g}, improvement {tr['improvement']:.2f})")
        if tr["alpha_beta"] is not None:
            lines.append(f"alpha_beta = {tr['alpha_beta']:.3f}  (r2 = {tr['alpha_beta_r_squared']:.3f})")
    for w in report["warnings"]:
        lines.append(f"warning: {w}")
    return "\n".join(lines)
