import json

import numpy as np
import pytest

from ntk_lens.experiments.analysis import analyze, format_report

from factories import fake_record

WIDTHS = [8, 16, 32, 64, 128, 256, 512]


def width_records():
    recs = []
    for w in WIDTHS:
        for s in range(2):
            recs.append(
                fake_record(
                    w,
                    s,
                    min_test_loss=2.0 * w**-0.5 * (1 + 0.01 * s),
                    effective_rank_min=min(w, 64) ** 0.3,
                    trace_ratio=20.0 * w**-0.7,
                )
            )
    return recs


class TestAnalyze:
    def test_loss_scaling(self):
        rep = analyze(width_records())
        assert rep["loss_scaling"]["exponent"] == pytest.approx(-0.5, abs=1e-10)
        assert rep["loss_scaling"]["r_squared"] == pytest.approx(1.0, abs=1e-12)

    def test_transition_and_beta(self):
        tr = analyze(width_records())["transition"]
        assert tr["detected"] and tr["breakpoint_width"] in (32, 64, 128)
        assert tr["alpha_beta"] == pytest.approx(-0.7, abs=1e-10)

    def test_points_and_counts(self):
        recs = width_records() + [fake_record(8, 5, "failed")]
        rep = analyze(recs)
        assert rep["n_records"] == 15 and rep["n_failed"] == 1
        first = rep["points"][0]
        assert first["sweep_value"] == 8 and first["n_ok"] == 2 and first["n_failed"] == 1
        assert first["trace_ratio"]["mean"] == pytest.approx(20.0 * 8**-0.7)

    def test_json_safe(self):
        recs = [fake_record(v, 0, adaptation_rate_min=float("nan")) for v in (8, 16, 32)]
        text = json.dumps(analyze(recs), allow_nan=False)
        assert json.loads(text)["points"][0]["abs_adaptation_rate_min"]["mean"] is None

    def test_noise_axis_has_no_fits(self):
        recs = [fake_record(v, 0, axis="keep_fractions") for v in (0.05, 0.25, 1.0)]
        rep = analyze(recs)
        assert rep["loss_scaling"] is None and rep["transition"] is None

    def test_empty(self):
        with pytest.raises(ValueError):
            analyze([])


class TestFormat:
    def test_table_rows(self):
        text = format_report(analyze(width_records()))
        lines = text.splitlines()
        assert lines[0].startswith("config h  axis widths  records 14")
        assert sum(1 for line in lines if line.split() and line.split()[0] in map(str, WIDTHS)) == len(WIDTHS)
        assert "loss scaling: L_min ~ x^-0.500" in text
        assert "alpha_beta = -0.700" in text

    def test_missing_values_blank(self):
        recs = [fake_record(v, 0, adaptation_rate_min=float("nan")) for v in (8, 16, 32)]
        text = format_report(analyze(recs))
        assert "nan" not in text.lower()

    def test_no_transition_line(self):
        recs = [fake_record(w, 0, effective_rank_min=w**0.3, trace_ratio=w**-0.5) for w in WIDTHS]
        assert "no transition detected" in format_report(analyze(recs))

    def test_warnings_listed(self):
        rec = fake_record(8, 0)
        rec.warnings = ["something odd"]
        assert "warning: something odd" in format_report(analyze([rec]))
        assert np.isfinite(analyze([rec])["points"][0]["trace_ratio"]["mean"])
