"""Small configs and fake records shared across test modules."""

from ntk_lens.dynamics import DynamicsTrace, KeyQuantities
from ntk_lens.experiments.config import parse_config
from ntk_lens.experiments.records import RunRecord


def tiny(**over):
    """A seconds-scale sweep config; ``section__key=value`` overrides single fields."""
    raw = {
        "name": "tiny",
        "dataset": {"kind": "synthetic", "train_size": 32, "test_size": 64, "pool_size": 200},
        "model": {"hidden_widths": [8, 8]},
        "optimizer": {"lr": 0.01},
        "training": {"epochs": 20, "ntk_every": 5, "probe_size": 8, "chi_window": 10},
        "sweep": {"axis": "widths", "values": [8, 16]},
        "ensemble": {"count": 2},
    }
    for dotted, value in over.items():
        section, key = dotted.split("__")
        raw.setdefault(section, {})[key] = value
    return parse_config(raw)


def fake_record(value, seed, status="ok", axis="widths", **key):
    base = dict(
        trace_init=1.0,
        trace_min=2.0,
        trace_ratio=1.0,
        effective_rank_init=3.0,
        effective_rank_min=4.0,
        adaptation_rate_min=-1.0,
        label_alignment_min=0.5,
        min_test_loss=0.3,
        epochs_to_min=10,
    )
    base.update(key)
    return RunRecord(
        config_hash="h",
        sweep_axis=axis,
        sweep_value=value,
        member=seed,
        seed=seed,
        init_seed=seed,
        data_seed=0,
        status=status,
        trace=DynamicsTrace(),
        key=KeyQuantities(**base) if status == "ok" else None,
    )
