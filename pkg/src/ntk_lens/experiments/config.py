"""Experiment configuration: YAML file -> validated ``ExperimentConfig``.

Schema (all sections except ``sweep`` have defaults)::

    name: width-sweep
    dataset:
      kind: synthetic            # synthetic | mnist | fashion_mnist | cifar10 | cifar4
      data_dir: null             # falls back to $NTK_LENS_DATA_DIR, then ./data
      train_size: 100            # replaced by the sweep value on a train_sizes sweep
      test_size: 1000
      pool_size: 10000           # synthetic only: size of the pool training sets are drawn from
      noise_sigma: 0.01          # keep_fractions sweeps only
      synthetic: {n_classes: 4, input_dim: 16, cluster_std: 0.3, modes_per_class: 4, seed: 0, min_angle_deg: 30}
    model:
      hidden_widths: [64, 64]    # every entry is replaced by the sweep value on a widths sweep
      activation: relu
      parametrization: standard
      init: lecun_normal
    optimizer:
      name: adam                 # adam | sgd
      lr: 0.001                  # one number, or one number per sweep value
      momentum: 0.9
      batch_size: null           # null = full batch
    training:
      epochs: 500
      ntk_every: 10
      probe_size: 128
      chi_window: 20             # epochs
    sweep:
      axis: widths               # widths | train_sizes | keep_fractions
      values: [8, 16, 32]
    ensemble:
      count: 5
      base_seed: 0
      vary: null                 # init | data | both; default depends on axis
    output:
      dir: runs/width-sweep
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from ..data import SyntheticTaskSpec
from ..nn import ACTIVATIONS, INITS, PARAMETRIZATIONS

AXES = ("widths", "train_sizes", "keep_fractions")
DATASET_KINDS = ("synthetic", "mnist", "fashion_mnist", "cifar10", "cifar4")
DEFAULT_VARY = {"widths": "init", "train_sizes": "data", "keep_fractions": "both"}


class ConfigError(ValueError):
    def __init__(self, message: str, path: str = "", line: int | None = None, source: str | None = None):
        self.path = path
        self.line = line
        where = f" (line {line})" if line is not None else ""
        key = f"{path}: " if path else ""
        text = f"{key}{message}{where}"
        if source is not None and line is not None:
            lines = source.splitlines()
            if 1 <= line <= len(lines):
                text += f"\n    {line:4d} | {lines[line - 1]}"
        super().__init__(text)


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synthetic"
    data_dir: str | None = None
    train_size: int = 100
    test_size: int = 1000
    pool_size: int = 10000
    noise_sigma: float = 0.01
    synthetic: SyntheticTaskSpec = field(default_factory=SyntheticTaskSpec)


@dataclass(frozen=True)
class ModelConfig:
    hidden_widths: tuple[int, ...] = (64, 64)
    activation: str = "relu"
    parametrization: str = "standard"
    init: str = "lecun_normal"


@dataclass(frozen=True)
class OptimizerConfig:
    name: str = "adam"
    lr: tuple[float, ...] = (1e-3,)
    momentum: float = 0.9
    batch_size: int | None = None


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 500
    ntk_every: int = 10
    probe_size: int = 128
    chi_window: int = 20


@dataclass(frozen=True)
class SweepConfig:
    axis: str
    values: tuple[float, ...]


@dataclass(frozen=True)
class EnsembleConfig:
    count: int = 20
    base_seed: int = 0
    vary: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    sweep: SweepConfig
    name: str = "experiment"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    output_dir: str = "runs"

    @property
    def vary(self) -> str:
        return self.ensemble.vary or DEFAULT_VARY[self.sweep.axis]

    def lr_for(self, sweep_value) -> float:
        lrs = self.optimizer.lr
        if len(lrs) == 1:
            return lrs[0]
        return lrs[list(self.sweep.values).index(sweep_value)]

    def canonical(self) -> dict:
        """Everything that determines results; the output directory is excluded."""
        d = asdict(self)
        d.pop("output_dir")
        return d

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _line_index(source: str) -> dict[tuple, int]:
    """Map key paths to 1-based line numbers using the YAML node tree."""
    index: dict[tuple, int] = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = path + (k.value,)
                index[key] = k.start_mark.line + 1
                walk(v, key)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                index[path + (i,)] = v.start_mark.line + 1
                walk(v, path + (i,))

    try:
        root = yaml.compose(source)
    except yaml.YAMLError:
        return index
    if root is not None:
        walk(root, ())
    return index


class _Reader:
    def __init__(self, source: str | None, lines: dict[tuple, int]):
        self.source = source
        self.lines = lines

    def error(self, path: tuple, message: str) -> ConfigError:
        line = None
        for cut in range(len(path), 0, -1):
            if path[:cut] in self.lines:
                line = self.lines[path[:cut]]
                break
        return ConfigError(message, ".".join(str(p) for p in path), line, self.source)

    def section(self, raw: dict, name: str, allowed: set[str]) -> dict:
        sec = raw.get(name) or {}
        if not isinstance(sec, dict):
            raise self.error((name,), "must be a mapping")
        unknown = set(sec) - allowed
        if unknown:
            key = sorted(unknown)[0]
            raise self.error((name, key), f"unknown key {key!r}; allowed: {', '.join(sorted(allowed))}")
        return sec

    def integer(self, path, value, minimum=None) -> int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise self.error(path, f"expected an integer, got {value!r}")
        if minimum is not None and value < minimum:
            raise self.error(path, f"must be >= {minimum}, got {value}")
        return value

    def number(self, path, value, positive=False) -> float:
        # YAML 1.1 reads "1e-3" (no dot) as a string
        if isinstance(value, str):
            try:
                value = float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.error(path, f"expected a number, got {value!r}")
        if positive and not value > 0:
            raise self.error(path, f"must be positive, got {value}")
        return float(value)

    def choice(self, path, value, options) -> str:
        if value not in options:
            raise self.error(path, f"must be one of {', '.join(options)}; got {value!r}")
        return value


def parse_config(raw: dict, source: str | None = None) -> ExperimentConfig:
    r = _Reader(source, _line_index(source) if source else {})
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at top level")
    top_allowed = {"name", "dataset", "model", "optimizer", "training", "sweep", "ensemble", "output"}
    for key in raw:
        if key not in top_allowed:
            raise r.error((key,), f"unknown section {key!r}")
    if "sweep" not in raw:
        raise ConfigError("missing required section 'sweep'")

    sw = r.section(raw, "sweep", {"axis", "values"})
    axis = r.choice(("sweep", "axis"), sw.get("axis"), AXES)
    values = sw.get("values")
    if not isinstance(values, list) or not values:
        raise r.error(("sweep", "values"), "must be a nonempty list")
    if axis == "keep_fractions":
        vals = tuple(r.number(("sweep", "values", i), v, positive=True) for i, v in enumerate(values))
        if any(v > 1.0 for v in vals):
            raise r.error(("sweep", "values"), "keep fractions must lie in (0, 1]")
    else:
        vals = tuple(r.integer(("sweep", "values", i), v, minimum=1) for i, v in enumerate(values))
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise r.error(("sweep", "values"), "values must be strictly increasing")
    sweep = SweepConfig(axis, vals)

    ds = r.section(raw, "dataset", {"kind", "data_dir", "train_size", "test_size", "pool_size", "noise_sigma", "synthetic"})
    syn_raw = ds.get("synthetic") or {}
    if not isinstance(syn_raw, dict):
        raise r.error(("dataset", "synthetic"), "must be a mapping")
    syn_fields = set(SyntheticTaskSpec.__dataclass_fields__)
    for key in syn_raw:
        if key not in syn_fields:
            raise r.error(("dataset", "synthetic", key), f"unknown key {key!r}")
    syn_defaults = SyntheticTaskSpec()
    synthetic = SyntheticTaskSpec(
        n_classes=r.integer(("dataset", "synthetic", "n_classes"), syn_raw.get("n_classes", syn_defaults.n_classes), 2),
        input_dim=r.integer(("dataset", "synthetic", "input_dim"), syn_raw.get("input_dim", syn_defaults.input_dim), 1),
        cluster_std=r.number(("dataset", "synthetic", "cluster_std"), syn_raw.get("cluster_std", syn_defaults.cluster_std)),
        seed=r.integer(("dataset", "synthetic", "seed"), syn_raw.get("seed", syn_defaults.seed), 0),
        modes_per_class=r.integer(
            ("dataset", "synthetic", "modes_per_class"), syn_raw.get("modes_per_class", syn_defaults.modes_per_class), 1
        ),
        min_angle_deg=r.number(
            ("dataset", "synthetic", "min_angle_deg"), syn_raw.get("min_angle_deg", syn_defaults.min_angle_deg)
        ),
    )
    dd = DatasetConfig()
    data_dir = ds.get("data_dir")
    if data_dir is not None and not isinstance(data_dir, str):
        raise r.error(("dataset", "data_dir"), "must be a path string")
    dataset = DatasetConfig(
        kind=r.choice(("dataset", "kind"), ds.get("kind", dd.kind), DATASET_KINDS),
        data_dir=data_dir,
        train_size=r.integer(("dataset", "train_size"), ds.get("train_size", dd.train_size), 1),
        test_size=r.integer(("dataset", "test_size"), ds.get("test_size", dd.test_size), 1),
        pool_size=r.integer(("dataset", "pool_size"), ds.get("pool_size", dd.pool_size), 1),
        noise_sigma=r.number(("dataset", "noise_sigma"), ds.get("noise_sigma", dd.noise_sigma)),
        synthetic=synthetic,
    )

    md = r.section(raw, "model", {"hidden_widths", "activation", "parametrization", "init"})
    mdef = ModelConfig()
    widths = md.get("hidden_widths", list(mdef.hidden_widths))
    if not isinstance(widths, list) or not widths:
        raise r.error(("model", "hidden_widths"), "must be a nonempty list of layer widths")
    model = ModelConfig(
        hidden_widths=tuple(r.integer(("model", "hidden_widths", i), w, 1) for i, w in enumerate(widths)),
        activation=r.choice(("model", "activation"), md.get("activation", mdef.activation), ACTIVATIONS),
        parametrization=r.choice(
            ("model", "parametrization"), md.get("parametrization", mdef.parametrization), PARAMETRIZATIONS
        ),
        init=r.choice(("model", "init"), md.get("init", mdef.init), INITS),
    )

    op = r.section(raw, "optimizer", {"name", "lr", "momentum", "batch_size"})
    odef = OptimizerConfig()
    lr_raw = op.get("lr", list(odef.lr))
    if isinstance(lr_raw, list):
        lrs = tuple(r.number(("optimizer", "lr", i), v, positive=True) for i, v in enumerate(lr_raw))
        if len(lrs) not in (1, len(vals)):
            raise r.error(("optimizer", "lr"), f"give one learning rate or one per sweep value ({len(vals)})")
    else:
        lrs = (r.number(("optimizer", "lr"), lr_raw, positive=True),)
    batch = op.get("batch_size", odef.batch_size)
    optimizer = OptimizerConfig(
        name=r.choice(("optimizer", "name"), op.get("name", odef.name), ("adam", "sgd")),
        lr=lrs,
        momentum=r.number(("optimizer", "momentum"), op.get("momentum", odef.momentum)),
        batch_size=None if batch is None else r.integer(("optimizer", "batch_size"), batch, 1),
    )

    tr = r.section(raw, "training", {"epochs", "ntk_every", "probe_size", "chi_window"})
    tdef = TrainingConfig()
    training = TrainingConfig(
        epochs=r.integer(("training", "epochs"), tr.get("epochs", tdef.epochs), 1),
        ntk_every=r.integer(("training", "ntk_every"), tr.get("ntk_every", tdef.ntk_every), 1),
        probe_size=r.integer(("training", "probe_size"), tr.get("probe_size", tdef.probe_size), 1),
        chi_window=r.integer(("training", "chi_window"), tr.get("chi_window", tdef.chi_window), 1),
    )
    if training.probe_size > dataset.test_size:
        raise r.error(("training", "probe_size"), "probe_size cannot exceed dataset.test_size")

    en = r.section(raw, "ensemble", {"count", "base_seed", "vary"})
    edef = EnsembleConfig()
    vary = en.get("vary")
    ensemble = EnsembleConfig(
        count=r.integer(("ensemble", "count"), en.get("count", edef.count), 1),
        base_seed=r.integer(("ensemble", "base_seed"), en.get("base_seed", edef.base_seed), 0),
        vary=None if vary is None else r.choice(("ensemble", "vary"), vary, ("init", "data", "both")),
    )

    out = r.section(raw, "output", {"dir"})
    name = raw.get("name", "experiment")
    if not isinstance(name, str):
        raise r.error(("name",), "must be a string")
    return ExperimentConfig(
        sweep=sweep,
        name=name,
        dataset=dataset,
        model=model,
        optimizer=optimizer,
        training=training,
        ensemble=ensemble,
        output_dir=str(out.get("dir", f"runs/{name}")),
    )


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        source = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {p.resolve()}: {exc.strerror}") from exc
    try:
        raw = yaml.safe_load(source)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}", line=line, source=source) from exc
    return parse_config(raw, source)


def with_overrides(cfg: ExperimentConfig, *, ntk_every: int | None = None, seed: int | None = None, output_dir=None):
    out = cfg
    if ntk_every is not None:
        if ntk_every < 1:
            raise ConfigError("--ntk-every must be >= 1")
        out = replace(out, training=replace(out.training, ntk_every=ntk_every))
    if seed is not None:
        if seed < 0:
            raise ConfigError("--seed must be >= 0")
        out = replace(out, ensemble=replace(out.ensemble, base_seed=seed))
    if output_dir is not None:
        out = replace(out, output_dir=str(output_dir))
    return out


def to_plain(cfg: ExperimentConfig) -> dict:
    """Config as a YAML-ready mapping in the file schema."""
    d = cfg.canonical()
    d["sweep"]["values"] = list(d["sweep"]["values"])
    d["model"]["hidden_widths"] = list(d["model"]["hidden_widths"])
    d["optimizer"]["lr"] = list(d["optimizer"]["lr"])
    d["output"] = {"dir": cfg.output_dir}
    return d
