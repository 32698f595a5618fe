"""Built-in numerical property suite behind ``ntk-lens verify``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dynamics, linalg, ntk
from .nn import NetworkSpec, forward, init_params, per_sample_jacobian

FD_STEP = 1e-6
# pre-activations closer than this to a ReLU kink make central differences unreliable
KINK_MARGIN = 1e-3


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    residual: float
    tolerance: float
    detail: str = ""


def _check(name, residual, tol, detail="") -> Check:
    residual = float(residual)
    return Check(name, bool(np.isfinite(residual) and residual <= tol), residual, tol, detail)


def finite_difference_jacobian(spec: NetworkSpec, params, batch, h: float = FD_STEP) -> np.ndarray:
    """Central differences, one parameter at a time; rows sample-major like ``per_sample_jacobian``."""
    base = params.values
    cols = []
    for p in range(base.size):
        plus = base.copy()
        minus = base.copy()
        plus[p] += h
        minus[p] -= h
        fp, _ = forward(spec, params.with_values(plus), batch)
        fm, _ = forward(spec, params.with_values(minus), batch)
        cols.append(((fp - fm) / (2.0 * h)).reshape(-1))
    return np.stack(cols, axis=1)


def _smooth_case(rng, depth: int, max_width: int, max_d: int, has_bias: bool = True):
    """Random ReLU net and batch whose pre-activations stay clear of the kink."""
    for _ in range(100):
        widths = tuple(int(w) for w in rng.integers(4, max_width + 1, size=depth))
        spec = NetworkSpec(
            input_dim=int(rng.integers(2, 9)),
            hidden_widths=widths,
            output_dim=int(rng.integers(1, 4)) if has_bias else 1,
            activation="relu",
            parametrization="standard" if has_bias else "ntk_bias_free",
            seed=int(rng.integers(0, 2**31)),
        )
        params = init_params(spec)
        if has_bias:
            params = params.with_values(params.values + 0.1 * rng.normal(size=len(params)))
        batch = rng.normal(size=(int(rng.integers(2, max_d + 1)), spec.input_dim))
        _, cache = forward(spec, params, batch)
        if min(np.abs(h).min() for h in cache.pre) > KINK_MARGIN:
            return spec, params, batch
    raise RuntimeError("could not draw a smooth test case")


def check_jacobian(rng, n_cases: int = 4) -> Check:
    worst = 0.0
    for case in range(n_cases):
        depth = 2 if case % 2 == 0 else 3  # 3- and 4-layer nets
        spec, params, batch = _smooth_case(rng, depth, max_width=24, max_d=8)
        j = per_sample_jacobian(spec, params, batch)
        j_fd = finite_difference_jacobian(spec, params, batch)
        worst = max(worst, np.abs(j - j_fd).max() / np.abs(j_fd).max())
    return _check("jacobian vs finite differences", worst, 1e-5, f"{n_cases} nets, max |J - J_fd| / max |J_fd|")


def check_ck_reconstruction(rng, n_cases: int = 20) -> Check:
    worst = 0.0
    for case in range(n_cases):
        depth = 1 + case % 4
        widths = tuple(int(w) for w in rng.integers(4, 65, size=depth))
        spec = NetworkSpec(
            input_dim=int(rng.integers(2, 12)),
            hidden_widths=widths,
            output_dim=1,
            activation="relu" if case % 5 else "identity",
            parametrization="ntk_bias_free",
            seed=int(rng.integers(0, 2**31)),
        )
        params = init_params(spec)
        batch = rng.normal(size=(int(rng.integers(2, 17)), spec.input_dim))
        direct = ntk.raw_kernel(spec, params, batch, method="jacobian")
        ck = ntk.ck_decomposition(spec, params, batch)
        worst = max(worst, linalg.frobenius_norm(ck.kernel - direct) / linalg.frobenius_norm(direct))
    return _check("CK reconstruction", worst, 1e-8, f"{n_cases} bias-free nets, depth 1-4, relative Frobenius error")


def check_spectral_invariants(rng, n_cases: int = 6) -> Check:
    worst = 0.0
    for case in range(n_cases):
        spec = NetworkSpec(
            input_dim=5,
            hidden_widths=(int(rng.integers(4, 33)),) * (1 + case % 3),
            output_dim=int(rng.integers(1, 4)),
            seed=int(rng.integers(0, 2**31)),
        )
        params = init_params(spec)
        batch = rng.normal(size=(int(rng.integers(2, 12)), 5))
        for normalized in (False, True):
            snap = ntk.compute_ntk(spec, params, batch, normalize_gradients=normalized)
            tr = snap.trace
            worst = max(
                worst,
                max(0.0, -snap.eigenvalues.min()) / tr / ntk.PSD_RTOL,
                abs(snap.eigenvalues.sum() - tr) / tr / ntk.TRACE_RTOL,
                np.abs(snap.kernel - snap.kernel.T).max() / np.abs(snap.kernel).max() / ntk.SYMMETRY_RTOL,
            )
            if normalized:
                worst = max(worst, np.abs(np.diag(snap.kernel) - 1.0).max() / 1e-10)
    # residual is the worst violation as a fraction of its own tolerance
    return _check("NTK symmetric PSD, trace, unit diagonal", worst, 1.0, "worst violation / tolerance")


def check_effective_rank_toys() -> list[Check]:
    g1 = ntk.effective_rank(np.array([0.5, 0.5]))
    g2 = ntk.effective_rank(np.array([1.0 / 3.0, 2.0 / 3.0]))
    return [
        _check("effective rank, uniform toy", abs(g1 - 2.0), 1e-12, f"Γ(diag(1/2,1/2)) = {g1:.12g}"),
        _check(
            "effective rank, skewed toy",
            abs(g2 - 1.889882) if g2 < 2.0 else np.inf,
            1e-5,
            f"Γ(diag(1/3,2/3)) = {g2:.7f} < 2",
        ),
    ]


def check_adaptation_rate() -> Check:
    epochs = np.arange(400.0)
    log_loss = -0.01 * epochs
    tr = -5.0 * log_loss + 3.0
    worst = 0.0
    for window in (5, 10, 20):
        chi = dynamics.adaptation_rate(tr, log_loss, window).chi
        worst = max(worst, np.abs(chi + 5.0).max() / 5.0)
    return _check("adaptation rate slope recovery", worst, 0.01, "|chi + 5| / 5 for windows 5, 10, 20")


def check_eigensolver(rng) -> Check:
    eig = linalg.sym_eigendecompose(np.array([[2.0, 1.0], [1.0, 2.0]]))
    worst = np.abs(eig.eigenvalues - [3.0, 1.0]).max()
    a = rng.normal(size=(30, 30))
    a = a + a.T
    res = linalg.sym_eigendecompose(a)
    v, lam = res.eigenvectors, res.eigenvalues
    worst = max(
        worst,
        np.abs(v @ np.diag(lam) @ v.T - a).max() / np.abs(a).max(),
        np.abs(v.T @ v - np.eye(30)).max(),
    )
    return _check("Jacobi eigensolver", worst, 1e-10, "closed-form 2x2, reconstruction and orthogonality at n=30")


def run_checks(seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    return [
        check_jacobian(rng),
        check_ck_reconstruction(rng),
        check_spectral_invariants(rng),
        *check_effective_rank_toys(),
        check_adaptation_rate(),
        check_eigensolver(rng),
    ]


def format_table(checks: list[Check]) -> str:
    width = max(len(c.name) for c in checks)
    lines = [f"{'check':<{width}}  status  {'residual':>10}  {'tolerance':>9}  detail"]
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        lines.append(f"{c.name:<{width}}  {status:<6}  {c.residual:>10.3e}  {c.tolerance:>9.1e}  {c.detail}")
    return "\n".join(lines)
