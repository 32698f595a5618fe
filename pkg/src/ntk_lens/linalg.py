"""Dense real linear algebra used for NTK spectral analysis.

Matrices are plain 2-D ``float64`` numpy arrays. Two symmetric eigensolvers
share one output contract (descending eigenvalues, deterministic eigenvector
signs): a cyclic Jacobi solver written here, and LAPACK ``syevd`` through
``numpy.linalg.eigh`` for kernels too large for Jacobi to be practical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# near-equal magnitudes inside this relative band count as ties for the sign rule
_SIGN_TIE_RTOL = 1e-12
_SYMMETRY_RTOL = 1e-8


class LinalgError(ValueError):
    """Base class for linear algebra failures."""


class ShapeError(LinalgError):
    pass


class NotSymmetricError(LinalgError):
    pass


class ConvergenceError(LinalgError):
    def __init__(self, message: str, residual: float, sweeps: int):
        super().__init__(message)
        self.residual = residual
        self.sweeps = sweeps


@dataclass(frozen=True)
class SymmetricEigenResult:
    """Eigenvalues sorted descending; ``eigenvectors[:, i]`` pairs with ``eigenvalues[i]``."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise LinalgError(f"{name} contains non-finite entries")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product ``a @ b`` with shape checking."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def frobenius_inner(a, b) -> float:
    """Frobenius inner product sum_ij a_ij * b_ij."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(a.ravel(), b.ravel()))


def frobenius_norm(a) -> float:
    return float(np.sqrt(frobenius_inner(a, a)))


def symmetrize(a, rtol: float = _SYMMETRY_RTOL) -> np.ndarray:
    """Return (A + A^T)/2 after checking that A is symmetric to within ``rtol * max|A|``."""
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got {a.shape[0]}x{a.shape[1]}")
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    defect = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if defect > rtol * scale:
        raise NotSymmetricError(f"symmetry defect {defect:.3e} exceeds {rtol:g} * max|A| = {rtol * scale:.3e}")
    return 0.5 * (a + a.T)


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Circle-method pairing: n-1 rounds of n/2 disjoint (p, q) pairs, p < q, covering all pairs once."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        ps, qs = [], []
        for i in range(half):
            p, q = players[i], players[n - 1 - i]
            ps.append(min(p, q))
            qs.append(max(p, q))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _off_diagonal_max(a: np.ndarray) -> float:
    if a.shape[0] < 2:
        return 0.0
    off = np.abs(a - np.diag(np.diag(a)))
    return float(off.max())


def _jacobi(a: np.ndarray, tol: float, max_sweeps: int) -> tuple[np.ndarray, np.ndarray]:
    n = a.shape[0]
    # pad odd orders with a decoupled zero row/column so every round is a perfect matching
    size = n + (n % 2)
    work = np.zeros((size, size))
    work[:n, :n] = a
    vecs = np.eye(size)
    threshold = tol * float(np.sqrt(np.sum(a * a)))
    rounds = _round_robin(size) if size >= 2 else []

    for sweep in range(max_sweeps + 1):
        residual = _off_diagonal_max(work)
        if residual <= threshold:
            return np.diag(work)[:n].copy(), vecs[:n, :n].copy()
        if sweep == max_sweeps:
            break
        for ps, qs in rounds:
            apq = work[ps, qs]
            active = np.abs(apq) > 0.0
            if not active.any():
                continue
            ps_a, qs_a, apq = ps[active], qs[active], apq[active]
            app = work[ps_a, ps_a]
            aqq = work[qs_a, qs_a]
            theta = (aqq - app) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t[theta == 0.0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c

            # A <- P^T A P with P_pp = P_qq = c, P_pq = s, P_qp = -s; pairs are disjoint so they commute
            col_p = work[:, ps_a].copy()
            col_q = work[:, qs_a]
            work[:, ps_a] = col_p * c - col_q * s
            work[:, qs_a] = col_p * s + col_q * c
            row_p = work[ps_a, :].copy()
            row_q = work[qs_a, :]
            work[ps_a, :] = c[:, None] * row_p - s[:, None] * row_q
            work[qs_a, :] = s[:, None] * row_p + c[:, None] * row_q
            work[ps_a, qs_a] = 0.0
            work[qs_a, ps_a] = 0.0

            vp = vecs[:, ps_a].copy()
            vq = vecs[:, qs_a]
            vecs[:, ps_a] = vp * c - vq * s
            vecs[:, qs_a] = vp * s + vq * c

    raise ConvergenceError(
        f"Jacobi did not converge in {max_sweeps} sweeps: max off-diagonal {residual:.3e} > {threshold:.3e}",
        residual=residual,
        sweeps=max_sweeps,
    )


def _canonical_order(values: np.ndarray, vectors: np.ndarray) -> SymmetricEigenResult:
    order = np.argsort(-values, kind="stable")
    values = values[order]
    vectors = vectors[:, order]
    for j in range(vectors.shape[1]):
        col = np.abs(vectors[:, j])
        top = col.max()
        lead = int(np.flatnonzero(col >= top * (1.0 - _SIGN_TIE_RTOL))[0])
        if vectors[lead, j] < 0.0:
            vectors[:, j] = -vectors[:, j]
    return SymmetricEigenResult(eigenvalues=values, eigenvectors=vectors)


def sym_eigendecompose(
    a,
    tol: float = 1e-14,
    *,
    method: str = "jacobi",
    max_sweeps: int = 100,
) -> SymmetricEigenResult:
    """Eigendecomposition of a real symmetric matrix.

    The input is symmetrized as (A + A^T)/2 after a symmetry check. Eigenvalues
    come back in descending order (stable for ties) and each eigenvector is
    flipped so that its largest-magnitude entry is nonnegative.

    Args:
        a: square symmetric matrix.
        tol: Jacobi stopping rule, max off-diagonal <= tol * ||A||_F.
        method: ``"jacobi"`` (cyclic Jacobi, parallel ordering) or ``"lapack"``.
        max_sweeps: Jacobi sweep limit before ``ConvergenceError``.
    """
    sym = symmetrize(a)
    n = sym.shape[0]
    if n == 0:
        return SymmetricEigenResult(np.zeros(0), np.zeros((0, 0)))
    if method == "jacobi":
        values, vectors = _jacobi(sym, tol, max_sweeps)
    elif method == "lapack":
        values, vectors = np.linalg.eigh(sym)
    else:
        raise ValueError(f"unknown eigensolver method {method!r}")
    return _canonical_order(np.asarray(values, dtype=np.float64), np.array(vectors, dtype=np.float64))


def sym_eigenvalues(a, *, method: str = "lapack") -> np.ndarray:
    """Descending eigenvalues only."""
    if method == "jacobi":
        return sym_eigendecompose(a, method="jacobi").eigenvalues
    sym = symmetrize(a)
    return np.linalg.eigvalsh(sym)[::-1].copy()


def clamp_nonnegative(eigenvalues, scale: float, rtol: float = 1e-10) -> np.ndarray:
    """Zero out eigenvalues in [-rtol*scale, 0); anything more negative is an error."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    floor = -rtol * scale
    if lam.size and lam.min() < floor:
        raise LinalgError(f"eigenvalue {lam.min():.3e} below PSD floor {floor:.3e}")
    return np.where(lam < 0.0, 0.0, lam)
