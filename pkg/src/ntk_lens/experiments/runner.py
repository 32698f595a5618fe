"""Training runs, ensembles and sweeps."""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .. import data as data_mod
from .. import dynamics, ntk
from ..nn import NetworkSpec, Optimizer, evaluate_loss, init_params, loss_and_grad
from .config import ExperimentConfig, to_plain
from .records import RECORDS_FILE, SUMMARY_FILE, RecordWriter, RunRecord, read_records, write_summary

# fraction of the epoch budget before which an early test-loss minimum is flagged
EARLY_MIN_FRACTION = 0.4


class SweepError(RuntimeError):
    pass


class AllMembersFailedError(SweepError):
    pass


@dataclass(frozen=True)
class Seeds:
    seed: int
    init_seed: int
    data_seed: int


def member_seeds(cfg: ExperimentConfig, member: int) -> Seeds:
    """Member ``j`` uses seed base+j for whichever draws the ensemble varies; the others stay at base."""
    base = cfg.ensemble.base_seed
    seed = base + member
    vary = cfg.vary
    return Seeds(
        seed=seed,
        init_seed=seed if vary in ("init", "both") else base,
        data_seed=seed if vary in ("data", "both") else base,
    )


def network_spec(cfg: ExperimentConfig, value, input_dim: int, output_dim: int, init_seed: int) -> NetworkSpec:
    widths = cfg.model.hidden_widths
    if cfg.sweep.axis == "widths":
        widths = tuple(int(value) for _ in widths)
    return NetworkSpec(
        input_dim=input_dim,
        hidden_widths=tuple(widths),
        output_dim=output_dim,
        activation=cfg.model.activation,
        parametrization=cfg.model.parametrization,
        init=cfg.model.init,
        seed=init_seed,
    )


@dataclass(frozen=True)
class RunData:
    train: data_mod.Dataset
    test: data_mod.Dataset
    probe: data_mod.Dataset


def _base_splits(cfg: ExperimentConfig) -> tuple[data_mod.Dataset, data_mod.Dataset]:
    ds = cfg.dataset
    if ds.kind == "synthetic":
        spec = ds.synthetic
        pool = data_mod.make_synthetic(spec, ds.pool_size, sample_seed=spec.seed + 1)
        test = data_mod.make_synthetic(spec, ds.test_size, sample_seed=spec.seed + 2)
        return pool, test
    root = data_mod.data_dir(ds.data_dir)
    pool = data_mod.load_named(ds.kind, "train", root)
    test_full = data_mod.load_named(ds.kind, "test", root)
    # the test set is fixed for the whole sweep
    test = data_mod.subsample(test_full, min(ds.test_size, len(test_full)), seed=ds.synthetic.seed + 2)
    return pool, test


def prepare_data(cfg: ExperimentConfig, value, data_seed: int, splits=None) -> RunData:
    pool, test = splits if splits is not None else _base_splits(cfg)
    size = int(value) if cfg.sweep.axis == "train_sizes" else cfg.dataset.train_size
    train = data_mod.subsample(pool, size, seed=data_seed)
    if cfg.sweep.axis == "keep_fractions":
        train = data_mod.noisy_replacement(train, float(value), cfg.dataset.noise_sigma, seed=data_seed)
    probe = test.take(np.arange(min(cfg.training.probe_size, len(test))))
    return RunData(train, test, probe)


def _chi_window_points(cfg: ExperimentConfig) -> int:
    return max(1, int(round(cfg.training.chi_window / cfg.training.ntk_every)))


@dataclass
class _Snap:
    point: dynamics.NtkPoint
    vectors: np.ndarray  # leading eigenvectors of the normalized-gradient kernel


def _snap(spec, params, probe, epoch, train_loss, test_loss, prev: _Snap | None) -> _Snap:
    m = ntk.measure(spec, params, probe.inputs, epoch_tag=epoch)
    mis = None
    if prev is not None:
        k = dynamics.top_modes(prev.point.effective_rank)
        mis = dynamics.ntk_misalignment(prev.vectors[:, :k], m.normalized.eigenvectors[:, :k], k)
    point = dynamics.NtkPoint(
        epoch=epoch,
        train_loss=train_loss,
        test_loss=test_loss,
        trace=m.raw.trace,
        effective_rank=m.normalized.effective_rank,
        label_alignment=dynamics.label_alignment(m.raw.kernel, probe.labels),
        misalignment=mis,
    )
    # keep only what the next misalignment can use
    k_next = dynamics.top_modes(point.effective_rank)
    return _Snap(point, m.normalized.eigenvectors[:, :k_next].copy())


def _batches(n: int, batch_size: int | None, rng: np.random.Generator):
    if batch_size is None or batch_size >= n:
        yield slice(None)
        return
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def run_single(cfg: ExperimentConfig, value, member: int = 0, *, splits=None) -> RunRecord:
    """Train one network and collect its loss-indexed NTK series.

    Epoch 0 is the initialization. Losses are recorded every epoch; NTK
    observables every ``ntk_every`` epochs and at the final epoch. The
    minimum-test-loss point is measured afterwards from checkpointed parameters.
    """
    started = time.perf_counter()
    seeds = member_seeds(cfg, member)
    run_data = prepare_data(cfg, value, seeds.data_seed, splits)
    train, test, probe = run_data.train, run_data.test, run_data.probe
    spec = network_spec(cfg, value, train.inputs.shape[1], train.n_classes, seeds.init_seed)
    params = init_params(spec)
    opt = Optimizer(cfg.optimizer.name, len(params), cfg.lr_for(value), cfg.optimizer.momentum)
    batch_rng = np.random.default_rng(seeds.seed + 7919)
    epochs = cfg.training.epochs
    every = cfg.training.ntk_every

    trace = dynamics.DynamicsTrace()
    status, failed_epoch = "ok", None
    snaps: list[_Snap] = []
    best_loss, best_epoch, best_params, best_prev = math.inf, -1, None, None

    for epoch in range(epochs + 1):
        if epoch > 0:
            for rows in _batches(len(train), cfg.optimizer.batch_size, batch_rng):
                _, grads = loss_and_grad(spec, params, train.inputs[rows], train.labels[rows])
                params = params.with_values(opt.step(params.values, grads))
        train_loss = evaluate_loss(spec, params, train.inputs, train.labels)
        test_loss = evaluate_loss(spec, params, test.inputs, test.labels)
        if not (math.isfinite(train_loss) and math.isfinite(test_loss)):
            status, failed_epoch = "failed", epoch - 1
            break
        trace.record_losses(epoch, train_loss, test_loss)
        if epoch % every == 0 or epoch == epochs:
            snaps.append(_snap(spec, params, probe, epoch, train_loss, test_loss, snaps[-1] if snaps else None))
        if test_loss < best_loss:
            best_loss, best_epoch = test_loss, epoch
            best_prev = snaps[-1] if snaps else None
            best_params = None if snaps and snaps[-1].point.epoch == epoch else params.copy()

    for s in snaps:
        trace.add_point(s.point)
    key, warnings = None, []
    if status == "ok":
        if best_params is not None:
            s = _snap(spec, best_params, probe, best_epoch, trace.train_loss[best_epoch], best_loss, best_prev)
            s.point.tag = "min_test_loss"
            trace.add_point(s.point)
        else:
            hit = next(p for p in trace.points if p.epoch == best_epoch)
            hit.tag = "min_test_loss"
        init = trace.points[0]
        init.tag = "init+min" if init.tag == "min_test_loss" else "init"
        key = dynamics.key_quantities(trace, _chi_window_points(cfg))
        if best_epoch < EARLY_MIN_FRACTION * epochs:
            warnings.append(
                f"test-loss minimum at epoch {best_epoch} is before {EARLY_MIN_FRACTION:g} x budget ({epochs})"
            )
    elif snaps:
        trace.points[0].tag = "init"

    return RunRecord(
        config_hash=cfg.config_hash,
        sweep_axis=cfg.sweep.axis,
        sweep_value=value,
        member=member,
        seed=seeds.seed,
        init_seed=seeds.init_seed,
        data_seed=seeds.data_seed,
        status=status,
        trace=trace,
        key=key,
        failed_epoch=failed_epoch,
        warnings=warnings,
        wall_seconds=time.perf_counter() - started,
    )


# --- aggregation ---

METRICS = (
    "min_test_loss",
    "trace_init",
    "trace_min",
    "trace_ratio",
    "effective_rank_init",
    "effective_rank_min",
    "adaptation_rate_min",
    "label_alignment_min",
    "epochs_to_min",
)


@dataclass(frozen=True)
class Stat:
    mean: float
    stderr: float
    n: int


def mean_stderr(values) -> Stat:
    """Mean and standard error (sample std with ddof=1 over sqrt(n)); NaNs are dropped."""
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return Stat(float("nan"), float("nan"), 0)
    mean = float(np.mean(v))
    stderr = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return Stat(mean, stderr, int(v.size))


@dataclass(frozen=True)
class EnsembleStats:
    sweep_value: float
    stats: dict[str, Stat]
    seeds: tuple[int, ...]
    n_failed: int

    def __getitem__(self, metric: str) -> Stat:
        return self.stats[metric]


def aggregate(records: list[RunRecord]) -> EnsembleStats:
    """Pure fold over records sorted by seed; failed members are counted, not averaged."""
    if not records:
        raise ValueError("no records to aggregate")
    values = {float(r.sweep_value) for r in records}
    if len(values) != 1:
        raise ValueError(f"records span several sweep values: {sorted(values)}")
    ordered = sorted(records, key=lambda r: r.seed)
    ok = [r for r in ordered if r.ok]
    if not ok:
        raise AllMembersFailedError(f"all {len(ordered)} members failed at sweep value {values.pop():g}")
    stats = {m: mean_stderr([getattr(r.key, m) for r in ok]) for m in METRICS}
    stats["abs_adaptation_rate_min"] = mean_stderr([abs(r.key.adaptation_rate_min) for r in ok])
    return EnsembleStats(
        sweep_value=ordered[0].sweep_value,
        stats=stats,
        seeds=tuple(r.seed for r in ok),
        n_failed=len(ordered) - len(ok),
    )


def run_ensemble(cfg: ExperimentConfig, value) -> tuple[list[RunRecord], EnsembleStats]:
    if cfg.ensemble.count < 1:
        raise ValueError("ensemble count must be >= 1")
    splits = _base_splits(cfg)
    records = [run_single(cfg, value, j, splits=splits) for j in range(cfg.ensemble.count)]
    return records, aggregate(records)


@dataclass
class SweepResult:
    config: ExperimentConfig
    records: list[RunRecord]
    ensembles: list[EnsembleStats] = field(default_factory=list)
    executed: int = 0

    def series(self, metric: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = np.array([float(e.sweep_value) for e in self.ensembles])
        y = np.array([e[metric].mean for e in self.ensembles])
        se = np.array([e[metric].stderr for e in self.ensembles])
        return x, y, se


def group_by_value(records: list[RunRecord]) -> list[EnsembleStats]:
    by_value: dict[float, list[RunRecord]] = {}
    for r in records:
        by_value.setdefault(float(r.sweep_value), []).append(r)
    out = []
    for v in sorted(by_value):
        try:
            out.append(aggregate(by_value[v]))
        except AllMembersFailedError:
            continue
    return out


# --- sweeps ---


def sweep_jobs(cfg: ExperimentConfig) -> list[tuple[float, int]]:
    return [(v, j) for v in cfg.sweep.values for j in range(cfg.ensemble.count)]


_WORKER_SPLITS: dict = {}


def _job(args):
    cfg, value, member = args
    # each worker process loads the dataset once per config
    key = cfg.config_hash
    if key not in _WORKER_SPLITS:
        _WORKER_SPLITS.clear()
        _WORKER_SPLITS[key] = _base_splits(cfg)
    return run_single(cfg, value, member, splits=_WORKER_SPLITS[key])


def default_jobs() -> int:
    return os.cpu_count() or 1


def run_sweep(cfg: ExperimentConfig, out_dir=None, *, jobs: int = 1, resume: bool = False, progress=None) -> SweepResult:
    """Run every (sweep value, member) job and persist records and the summary CSV.

    Records are appended by this process only, in job order. With ``resume``
    jobs whose (config hash, sweep value, seed) already appear in the records
    file are skipped; a records file from a different config is an error.
    """
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    records_path = out / RECORDS_FILE
    existing: list[RunRecord] = []
    if records_path.exists() and records_path.stat().st_size > 0:
        if not resume:
            raise SweepError(f"{records_path} already exists; pass --resume or choose another output directory")
        head, existing = read_records(records_path)
        found = head.get("config_hash") if head else None
        if found != cfg.config_hash:
            raise SweepError(f"{records_path} belongs to config {found}, not {cfg.config_hash}")
    done = {r.job_key for r in existing}
    pending = []
    for value, member in sweep_jobs(cfg):
        key = (cfg.config_hash, float(value), member_seeds(cfg, member).seed)
        if key not in done:
            pending.append((cfg, value, member))

    (out / "config.yaml").write_text(
        f"# ntk-lens config_hash={cfg.config_hash}\n" + yaml.safe_dump(to_plain(cfg), sort_keys=False)
    )
    writer = RecordWriter(records_path, cfg.config_hash)
    new: list[RunRecord] = []
    if jobs > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(pending))) as pool:
            results = pool.map(_job, pending)
            for i, rec in enumerate(results):
                writer.append(rec)
                new.append(rec)
                if progress:
                    progress(rec, i + 1, len(pending))
    else:
        for i, args in enumerate(pending):
            rec = _job(args)
            writer.append(rec)
            new.append(rec)
            if progress:
                progress(rec, i + 1, len(pending))

    records = existing + new
    write_summary(out / SUMMARY_FILE, records, cfg.config_hash)
    return SweepResult(cfg, records, group_by_value(records), executed=len(new))
