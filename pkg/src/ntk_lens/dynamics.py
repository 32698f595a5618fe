"""Training-run analytics: loss-indexed NTK series and the scalars derived from them.

Sign convention for the adaptation rate: chi = dTr / dlog(L_train) is stored
signed. A trace that rises while the training loss falls gives chi < 0;
comparisons of "larger adaptation" use |chi|.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import linalg

MIN_LOG_LOSS_STEP = 1e-9


@dataclass(frozen=True)
class AdaptationRate:
    """chi between consecutive running-mean points.

    ``chi[t]`` is the forward difference between averaged points ``t`` and
    ``t + 1``; ``position[t]`` is its center in units of the input index.
    Skipped points (flat log loss) hold NaN and are marked in ``skipped``.
    """

    chi: np.ndarray
    position: np.ndarray
    skipped: np.ndarray
    window: int

    def last_valid(self) -> float:
        ok = np.flatnonzero(~self.skipped)
        return float(self.chi[ok[-1]]) if ok.size else float("nan")


def running_mean(values, window: int) -> np.ndarray:
    """Centered running mean; output element t averages values[t : t + window]."""
    v = np.asarray(values, dtype=np.float64)
    kernel = np.full(window, 1.0 / window)
    return np.convolve(v, kernel, mode="valid")


def adaptation_rate(trace_series, log_train_loss_series, window: int = 20) -> AdaptationRate:
    """Running-averaged trace versus running-averaged log training loss, differentiated."""
    tr = np.asarray(trace_series, dtype=np.float64)
    ll = np.asarray(log_train_loss_series, dtype=np.float64)
    if tr.shape != ll.shape or tr.ndim != 1:
        raise ValueError("trace and log-loss series must be aligned 1-D arrays")
    if window < 1:
        raise ValueError("window must be >= 1")
    if tr.size < 2 * window:
        raise ValueError(f"series of length {tr.size} too short for window {window} (need {2 * window})")
    tr_bar = running_mean(tr, window)
    ll_bar = running_mean(ll, window)
    d_tr = np.diff(tr_bar)
    d_ll = np.diff(ll_bar)
    skipped = np.abs(d_ll) < MIN_LOG_LOSS_STEP
    chi = np.where(skipped, np.nan, d_tr / np.where(skipped, 1.0, d_ll))
    position = np.arange(d_tr.size) + (window - 1) / 2.0 + 0.5
    return AdaptationRate(chi, position, skipped, window)


def trace_ratio(trace_init: float, trace_min: float) -> float:
    """Relative trace growth (Tr_min - Tr_0) / Tr_0."""
    if not trace_init > 0.0:
        raise ValueError(f"trace_init must be positive, got {trace_init}")
    return (trace_min - trace_init) / trace_init


def label_gram(labels_onehot, kernel_dim: int) -> np.ndarray:
    """Y Y^T, lifted to the sample-major (d*n) layout as <y_i, y_j> on output-diagonal blocks."""
    y = linalg.as_matrix(labels_onehot, "labels")
    d, n = y.shape
    gram = y @ y.T
    if kernel_dim == d:
        return gram
    if kernel_dim == d * n:
        return np.kron(gram, np.eye(n))
    raise linalg.ShapeError(f"kernel of size {kernel_dim} matches neither d={d} nor d*n={d * n}")


def label_alignment(kernel, labels_onehot) -> float:
    k = linalg.as_matrix(kernel, "kernel")
    g = label_gram(labels_onehot, k.shape[0])
    nk = linalg.frobenius_norm(k)
    ng = linalg.frobenius_norm(g)
    if nk == 0.0 or ng == 0.0:
        raise ValueError("label alignment undefined for a zero-norm kernel or label Gram")
    return linalg.frobenius_inner(k, g) / (nk * ng)


def top_modes(effective_rank: float) -> int:
    """Number of leading eigenvectors compared by the misalignment: round(Gamma), at least 1."""
    return max(1, int(round(effective_rank)))


def ntk_misalignment(q_before, q_after, k: int) -> float:
    """1 minus the normalized overlap of the leading ``k`` eigenvectors.

    Overlaps are taken per eigenvector as |<q_i, q'_i>|, so the result does not
    depend on the arbitrary sign of each eigenvector and lies in [0, 1].
    """
    qb = linalg.as_matrix(q_before, "q_before")
    qa = linalg.as_matrix(q_after, "q_after")
    if qb.shape[0] != qa.shape[0]:
        raise linalg.ShapeError(f"eigenvector bases differ in dimension: {qb.shape} vs {qa.shape}")
    if not 1 <= k <= min(qb.shape[1], qa.shape[1]):
        raise ValueError(f"k={k} outside [1, {min(qb.shape[1], qa.shape[1])}]")
    a, b = qb[:, :k], qa[:, :k]
    overlap = float(np.abs(np.einsum("ij,ij->j", a, b)).sum())
    denom = linalg.frobenius_norm(a) * linalg.frobenius_norm(b)
    return min(max(1.0 - overlap / denom, 0.0), 1.0)


def locate_min_test_loss(test_losses, epochs=None) -> int:
    """Epoch of the smallest test loss; the earliest one wins ties."""
    losses = np.asarray(test_losses, dtype=np.float64)
    if losses.size == 0:
        raise ValueError("empty test-loss series")
    idx = int(np.argmin(losses))
    return int(epochs[idx]) if epochs is not None else idx


@dataclass
class NtkPoint:
    epoch: int
    train_loss: float
    test_loss: float
    trace: float
    effective_rank: float
    label_alignment: float
    misalignment: float | None = None
    tag: str = "regular"


@dataclass
class DynamicsTrace:
    """Per-epoch losses plus NTK observables at snapshot epochs.

    ``points`` is ordered by epoch and contains exactly one ``init`` point
    (epoch 0) and one ``min_test_loss`` point.
    """

    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    test_loss: list[float] = field(default_factory=list)
    points: list[NtkPoint] = field(default_factory=list)

    def record_losses(self, epoch: int, train: float, test: float) -> None:
        if self.epochs and epoch <= self.epochs[-1]:
            raise ValueError("epochs must be strictly increasing")
        self.epochs.append(epoch)
        self.train_loss.append(train)
        self.test_loss.append(test)

    def add_point(self, point: NtkPoint) -> None:
        for i, p in enumerate(self.points):
            if p.epoch == point.epoch:
                raise ValueError(f"duplicate NTK point at epoch {point.epoch}")
            if p.epoch > point.epoch:
                self.points.insert(i, point)
                return
        self.points.append(point)

    def point(self, tag: str) -> NtkPoint:
        # a run whose best test loss is at epoch 0 carries one point tagged "init+min"
        hits = [p for p in self.points if p.tag in (tag, "init+min")]
        if len(hits) != 1:
            raise ValueError(f"expected exactly one {tag!r} point, found {len(hits)}")
        return hits[0]

    def min_epoch(self) -> int:
        return locate_min_test_loss(self.test_loss, self.epochs)

    def points_until_min(self) -> list[NtkPoint]:
        stop = self.point("min_test_loss").epoch
        return [p for p in self.points if p.epoch <= stop]

    def to_dict(self) -> dict:
        return {
            "epochs": list(self.epochs),
            "train_loss": list(self.train_loss),
            "test_loss": list(self.test_loss),
            "points": [asdict(p) for p in self.points],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DynamicsTrace":
        return cls(
            epochs=list(data["epochs"]),
            train_loss=list(data["train_loss"]),
            test_loss=list(data["test_loss"]),
            points=[NtkPoint(**p) for p in data["points"]],
        )


def adaptation_series(points: list[NtkPoint], window: int) -> AdaptationRate | None:
    """Adaptation rate over a run's NTK points; the window shrinks to fit short series."""
    if len(points) < 2:
        return None
    w = max(1, min(window, len(points) // 2))
    tr = [p.trace for p in points]
    ll = [math.log(p.train_loss) for p in points]
    return adaptation_rate(tr, ll, w)


@dataclass(frozen=True)
class KeyQuantities:
    trace_init: float
    trace_min: float
    trace_ratio: float
    effective_rank_init: float
    effective_rank_min: float
    adaptation_rate_min: float
    label_alignment_min: float
    min_test_loss: float
    epochs_to_min: int


def key_quantities(trace: DynamicsTrace, chi_window: int) -> KeyQuantities:
    init = trace.point("init")
    best = trace.point("min_test_loss")
    rate = adaptation_series(trace.points_until_min(), chi_window)
    return KeyQuantities(
        trace_init=init.trace,
        trace_min=best.trace,
        trace_ratio=trace_ratio(init.trace, best.trace),
        effective_rank_init=init.effective_rank,
        effective_rank_min=best.effective_rank,
        adaptation_rate_min=rate.last_valid() if rate is not None else float("nan"),
        label_alignment_min=best.label_alignment,
        min_test_loss=best.test_loss,
        epochs_to_min=best.epoch,
    )
