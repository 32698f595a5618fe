"""Empirical NTK on a probe batch and the observables derived from it.

The vector-valued kernel is a rank-4 tensor over (sample, sample, output,
output); it is flattened sample-major, so row ``i*n + k`` belongs to output
``k`` at probe sample ``i``. Any consistent order gives the same spectrum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .nn import NetworkSpec, ParameterSet, jacobian_factors, per_sample_jacobian

ZERO_ROW_NORM = 1e-12
# eigenvalues below this fraction of the largest one are dropped from entropy sums
SPECTRUM_CUTOFF = 1e-14
PSD_RTOL = 1e-10
TRACE_RTOL = 1e-9
SYMMETRY_RTOL = 1e-12
# explicit (d*n) x P Jacobian is only materialized below this many entries
EXPLICIT_JACOBIAN_LIMIT = 20_000_000
JACOBI_MAX_DIM = 64


class DegenerateKernelError(ValueError):
    pass


class NtkInvariantError(ValueError):
    pass


def trace(kernel) -> float:
    k = linalg.as_matrix(kernel, "kernel")
    if k.shape[0] != k.shape[1]:
        raise linalg.ShapeError(f"trace needs a square matrix, got {k.shape[0]}x{k.shape[1]}")
    return float(np.trace(k))


def normalized_spectrum(eigenvalues) -> np.ndarray:
    """Clamp the spectrum to a nonnegative vector that sums to one."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    total = float(np.abs(lam).sum())
    lam = linalg.clamp_nonnegative(lam, total, PSD_RTOL)
    top = lam.max() if lam.size else 0.0
    if top <= 0.0:
        raise DegenerateKernelError("degenerate kernel: spectrum has no positive eigenvalue")
    lam = np.where(lam < SPECTRUM_CUTOFF * top, 0.0, lam)
    return lam / lam.sum()


def von_neumann_entropy(eigenvalues) -> float:
    p = normalized_spectrum(eigenvalues)
    p = p[p > 0.0]
    return float(-np.sum(p * np.log(p)))


def effective_rank(eigenvalues) -> float:
    """exp of the entropy of the trace-normalized spectrum, with 0 ln 0 = 0."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    gamma = float(np.exp(von_neumann_entropy(lam)))
    # exp(ln k) can land one ulp outside [1, k]
    return min(max(gamma, 1.0), float(lam.size))


@dataclass(frozen=True)
class NtkSnapshot:
    """One kernel measurement and its spectrum.

    ``eigenvalues`` are the raw descending eigenvalues of ``kernel``;
    ``normalized_eigenvalues`` are clamped and divided by their sum.
    """

    kernel: np.ndarray
    trace: float
    eigenvalues: np.ndarray
    normalized_eigenvalues: np.ndarray
    effective_rank: float
    epoch_tag: object = None
    normalized_gradients: bool = False
    eigenvectors: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        check_snapshot(self)

    @property
    def dim(self) -> int:
        return self.kernel.shape[0]


def check_snapshot(snap: NtkSnapshot) -> None:
    k = snap.kernel
    scale = float(np.max(np.abs(k))) if k.size else 0.0
    if float(np.max(np.abs(k - k.T))) > SYMMETRY_RTOL * scale:
        raise NtkInvariantError("kernel is not symmetric")
    if snap.eigenvalues.min() < -PSD_RTOL * max(snap.trace, 0.0):
        raise NtkInvariantError(f"kernel not PSD: min eigenvalue {snap.eigenvalues.min():.3e}, trace {snap.trace:.3e}")
    if abs(snap.trace - float(snap.eigenvalues.sum())) > TRACE_RTOL * abs(snap.trace):
        raise NtkInvariantError("trace and eigenvalue sum disagree")
    if abs(float(snap.normalized_eigenvalues.sum()) - 1.0) > 1e-12:
        raise NtkInvariantError("normalized spectrum does not sum to one")
    if not 1.0 <= snap.effective_rank <= snap.dim:
        raise NtkInvariantError(f"effective rank {snap.effective_rank} outside [1, {snap.dim}]")
    if snap.normalized_gradients:
        diag = np.diag(k)
        live = diag > 0.0
        if np.any(np.abs(diag[live] - 1.0) > 1e-10):
            raise NtkInvariantError("normalized-gradient kernel has non-unit diagonal")


def _lift(gram: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return gram
    return np.repeat(np.repeat(gram, n, axis=0), n, axis=1)


def kernel_from_factors(spec: NetworkSpec, params: ParameterSet, batch) -> np.ndarray:
    """Sum over layers of (delta delta^T) * (lifted input Gram), without forming the Jacobian."""
    n = spec.output_dim
    kernel = None
    for f in jacobian_factors(spec, params, batch):
        dd = f.delta @ f.delta.T
        term = dd * _lift(f.inputs @ f.inputs.T, n)
        if f.has_bias:
            term = term + dd
        kernel = term if kernel is None else kernel + term
    return kernel


def raw_kernel(spec: NetworkSpec, params: ParameterSet, batch, method: str = "auto") -> np.ndarray:
    """J J^T for the (d*n) x P per-sample Jacobian J."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("probe batch must be a nonempty 2-D array")
    if method == "auto":
        entries = x.shape[0] * spec.output_dim * sum(o * i + (o if spec.has_bias else 0) for o, i in spec.layer_dims)
        method = "jacobian" if entries <= EXPLICIT_JACOBIAN_LIMIT else "factored"
    if method == "jacobian":
        jac = per_sample_jacobian(spec, params, x)
        if not np.all(np.isfinite(jac)):
            raise ValueError("non-finite Jacobian entries")
        return jac @ jac.T
    if method == "factored":
        k = kernel_from_factors(spec, params, x)
        if not np.all(np.isfinite(k)):
            raise ValueError("non-finite Jacobian entries")
        return k
    raise ValueError(f"unknown kernel method {method!r}")


def normalize_kernel(kernel: np.ndarray) -> np.ndarray:
    """Kernel of unit-norm Jacobian rows; rows with norm below 1e-12 stay zero."""
    norms = np.sqrt(np.clip(np.diag(kernel), 0.0, None))
    inv = np.where(norms < ZERO_ROW_NORM, 0.0, 1.0 / np.where(norms < ZERO_ROW_NORM, 1.0, norms))
    return kernel * inv[:, None] * inv[None, :]


def snapshot_from_kernel(
    kernel: np.ndarray,
    *,
    epoch_tag=None,
    normalized_gradients: bool = False,
    keep_eigenvectors: bool = False,
    eigen_method: str = "auto",
) -> NtkSnapshot:
    if eigen_method == "auto":
        eigen_method = "jacobi" if kernel.shape[0] <= JACOBI_MAX_DIM else "lapack"
    if keep_eigenvectors:
        eig = linalg.sym_eigendecompose(kernel, method=eigen_method)
        values, vectors = eig.eigenvalues, eig.eigenvectors
    else:
        values, vectors = linalg.sym_eigenvalues(kernel, method=eigen_method), None
    return NtkSnapshot(
        kernel=kernel,
        trace=trace(kernel),
        eigenvalues=values,
        normalized_eigenvalues=normalized_spectrum(values),
        effective_rank=effective_rank(values),
        epoch_tag=epoch_tag,
        normalized_gradients=normalized_gradients,
        eigenvectors=vectors,
    )


def compute_ntk(
    spec: NetworkSpec,
    params: ParameterSet,
    probe_batch,
    normalize_gradients: bool = False,
    *,
    epoch_tag=None,
    method: str = "auto",
    keep_eigenvectors: bool = False,
    eigen_method: str = "auto",
) -> NtkSnapshot:
    """Empirical NTK of the network on ``probe_batch``.

    With ``normalize_gradients`` every Jacobian row is rescaled to unit norm
    before the Gram product, which removes per-sample gradient magnitudes from
    the spectrum.
    """
    k = raw_kernel(spec, params, probe_batch, method)
    if normalize_gradients:
        k = normalize_kernel(k)
    return snapshot_from_kernel(
        k,
        epoch_tag=epoch_tag,
        normalized_gradients=normalize_gradients,
        keep_eigenvectors=keep_eigenvectors,
        eigen_method=eigen_method,
    )


@dataclass(frozen=True)
class NtkMeasurement:
    """Raw-kernel snapshot (trace, alignment) and normalized-gradient snapshot (effective rank, eigenvectors)."""

    raw: NtkSnapshot
    normalized: NtkSnapshot


def measure(spec: NetworkSpec, params: ParameterSet, probe_batch, *, epoch_tag=None, method: str = "auto") -> NtkMeasurement:
    k = raw_kernel(spec, params, probe_batch, method)
    raw = snapshot_from_kernel(k, epoch_tag=epoch_tag)
    normed = snapshot_from_kernel(normalize_kernel(k), epoch_tag=epoch_tag, normalized_gradients=True, keep_eigenvectors=True)
    return NtkMeasurement(raw, normed)


# --- conjugate-kernel reconstruction (bias-free NTK parametrization, scalar output) ---


@dataclass
class CkDecomposition:
    """Layerwise pieces of Theta = C_L + sum_l Sigma_l * C_{l-1}.

    ``conjugate_kernels[l]`` is C_l = X_l^T X_l for l = 0..L;
    ``sensitivity[l-1]`` is S_l (width_l x d) and ``sensitivity_grams[l-1]`` its Gram S_l^T S_l.
    """

    conjugate_kernels: list[np.ndarray]
    sensitivity: list[np.ndarray]
    sensitivity_grams: list[np.ndarray]
    kernel: np.ndarray


def _sensitivity_columns(weights: list[np.ndarray], gates: list[np.ndarray], readout: np.ndarray, alpha: int) -> list[np.ndarray]:
    """s_alpha^l for l = 1..L as an explicit product of gate and scaled weight matrices."""
    depth = len(weights)
    widths = [w.shape[0] for w in weights]
    cols = [None] * depth
    v = np.diag(gates[depth - 1][:, alpha]) @ (readout / np.sqrt(widths[depth - 1]))
    cols[depth - 1] = v
    for l in range(depth - 2, -1, -1):
        v = (weights[l + 1].T / np.sqrt(widths[l])) @ v
        v = np.diag(gates[l][:, alpha]) @ v
        cols[l] = v
    return cols


def ck_decomposition(spec: NetworkSpec, params: ParameterSet, probe_batch) -> CkDecomposition:
    if spec.parametrization != "ntk_bias_free":
        raise ValueError("the CK decomposition is only defined for the bias-free NTK parametrization")
    if spec.output_dim != 1:
        raise ValueError("the CK decomposition needs a scalar-output network")
    x = np.asarray(probe_batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] != spec.input_dim:
        raise ValueError(f"probe batch must have shape (d, {spec.input_dim})")
    depth = len(spec.hidden_widths)
    weights = [params.view(f"W{l}") for l in range(1, depth + 1)]
    readout = params.view("readout")[0]

    # activations with samples as columns
    acts = [x.T]
    gates = []
    for w in weights:
        h = w @ acts[-1]
        if spec.activation == "relu":
            act, gate = np.maximum(h, 0.0), (h > 0.0).astype(np.float64)
        else:
            act, gate = h, np.ones_like(h)
        acts.append(act / np.sqrt(w.shape[0]))
        gates.append(gate)

    d = x.shape[0]
    sens = [np.empty((w.shape[0], d)) for w in weights]
    for alpha in range(d):
        for l, col in enumerate(_sensitivity_columns(weights, gates, readout, alpha)):
            sens[l][:, alpha] = col

    cks = [a.T @ a for a in acts]
    grams = [s.T @ s for s in sens]
    kernel = cks[depth].copy()
    for l in range(depth):
        kernel += grams[l] * cks[l]
    return CkDecomposition(cks, sens, grams, kernel)

