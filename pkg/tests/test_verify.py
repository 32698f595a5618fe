import numpy as np
import pytest

from ntk_lens import ntk, verify
from ntk_lens.nn import NetworkSpec, forward, init_params, per_sample_jacobian


def negate_first_column(monkeypatch):
    real = ntk._sensitivity_columns

    def broken(weights, gates, readout, alpha):
        cols = real(weights, gates, readout, alpha)
        if alpha == 0:
            cols[0] = -cols[0]
        return cols

    monkeypatch.setattr(ntk, "_sensitivity_columns", broken)


@pytest.fixture(scope="module")
def checks():
    return verify.run_checks(seed=0)


class TestChecks:
    def test_all_pass(self, checks):
        failed = [c.name for c in checks if not c.passed]
        assert failed == []

    def test_toy_detail(self, checks):
        details = [c.detail for c in checks]
        assert "Γ(diag(1/2,1/2)) = 2" in details
        assert "Γ(diag(1/3,2/3)) = 1.8898816 < 2" in details

    def test_table(self, checks):
        lines = verify.format_table(checks).splitlines()
        assert len(lines) == len(checks) + 1
        assert all(" PASS " in line for line in lines[1:])

    def test_residuals_within_tolerance(self, checks):
        for c in checks:
            assert 0.0 <= c.residual <= c.tolerance

    def test_other_seed(self):
        assert all(c.passed for c in verify.run_checks(seed=7))


class TestDetectsFaults:
    def test_ck_sign_error(self, monkeypatch):
        negate_first_column(monkeypatch)
        check = verify.check_ck_reconstruction(np.random.default_rng(0))
        assert not check.passed and check.residual > 1e-3

    def test_jacobian_fault(self, monkeypatch):
        def scaled(spec, params, batch):
            return 1.001 * per_sample_jacobian(spec, params, batch)

        monkeypatch.setattr(verify, "per_sample_jacobian", scaled)
        assert not verify.check_jacobian(np.random.default_rng(0), n_cases=2).passed

    def test_nan_residual_fails(self):
        assert not verify._check("x", float("nan"), 1.0).passed


class TestFiniteDifference:
    def test_linear_network_is_exact(self):
        spec = NetworkSpec(input_dim=3, hidden_widths=(4,), output_dim=2, activation="identity", seed=1)
        params = init_params(spec)
        batch = np.random.default_rng(0).normal(size=(3, 3))
        j = per_sample_jacobian(spec, params, batch)
        j_fd = verify.finite_difference_jacobian(spec, params, batch, h=1e-3)
        # only the bilinear W1 x readout terms carry curvature, and central differences cancel it
        np.testing.assert_allclose(j_fd, j, atol=1e-9)

    def test_smooth_case_clears_kinks(self):
        rng = np.random.default_rng(3)
        for depth in (2, 3):
            spec, params, batch = verify._smooth_case(rng, depth, 16, 8)
            _, cache = forward(spec, params, batch)
            assert min(np.abs(h).min() for h in cache.pre) > verify.KINK_MARGIN
