"""Run configured experiments over a class stream and record metrics.

A run writes, into its output directory:

* ``metrics.csv``  one row per session: t, mode, seed, accuracy, gap, lambda, r, budget_units
* ``losses.csv``   one row per training epoch: t, phase, epoch, loss
* ``config.json``  the resolved config, its hash and the summary metrics
* ``codec.bin`` / ``buffer.bin``  final codec and memory (CILC blobs), when the mode keeps memory
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from memcil import container
from memcil.codec import make_codec
from memcil.datastream import SynthSpec, load_dataset, make_stream, next_session, synth_generate
from memcil.errors import ConfigError
from memcil.evaluation import average_incremental_accuracy, evaluate, measure_domain_gap
from memcil.trainer import MODES, TrainConfig, init_state, run_session

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("t", "mode", "seed", "accuracy", "gap", "lambda", "r", "budget_units")
SUMMARY_COLUMNS = ("param", "value", "mode", "seed", "lambda", "r", "budget_units",
                   "average_accuracy", "mean_gap")
_TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}


@dataclass
class RunConfig:
    # data: synthetic blobs unless train_path is given
    class_count: int = 10
    dim: int = 16
    per_class_train: int = 50
    per_class_test: int = 100
    separation: float = 2.75
    mean_rank: int | None = 10
    image_shape: tuple | None = None
    data_seed: int | None = None  # defaults to seed
    train_path: str | None = None
    test_path: str | None = None
    classes_per_session: int = 2
    stream_seed: int | None = None  # defaults to seed
    # memory
    codec: str = "pca"
    fidelity: str = "1/3"
    budget_samples: float = 20  # in full-size samples
    # training
    mode: str = "aux_duplet_ca"
    lam: float = 1.0
    seed: int = 0
    epochs_duplet: int = 30
    epochs_ca: int = 20
    batch_pairs: int = 32
    learning_rate: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 1e-5
    schedule: tuple = ()
    ca_lr_scale: float = 0.1
    ca_vary_extractor: bool = False
    hidden: tuple = (64, 64)
    classifier: str = "head"
    out_dir: str | None = None

    def __post_init__(self):
        if self.image_shape is not None:
            self.image_shape = tuple(int(v) for v in self.image_shape)
        self.hidden = tuple(int(v) for v in self.hidden)
        self.schedule = tuple(tuple(s) for s in self.schedule)
        self.fidelity = str(Fraction(str(self.fidelity)))
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.classifier not in ("head", "ncm"):
            raise ConfigError("classifier must be 'head' or 'ncm'")
        if self.budget_samples <= 0:
            raise ConfigError("budget must be positive")
        self.train_config()

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        d["schedule"] = [list(s) for s in self.schedule]
        if self.image_shape is not None:
            d["image_shape"] = list(self.image_shape)
        return d

    def config_hash(self):
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def train_config(self):
        kw = {k: v for k, v in dataclasses.asdict(self).items() if k in _TRAIN_FIELDS}
        return TrainConfig(**kw)

    def effective_codec_kind(self):
        if self.mode == "real_exemplar":
            return "identity"
        if self.mode == "no_exemplar":
            return None
        return self.codec

    def load_data(self):
        if self.train_path:
            return load_dataset(self.train_path, self.test_path)
        seed = self.seed if self.data_seed is None else self.data_seed
        # the default rank assumes the 16-D toy stream; smaller dims cap it
        rank = None if self.mean_rank is None else min(self.mean_rank, self.dim)
        spec = SynthSpec(self.class_count, self.dim, self.per_class_train, self.per_class_test,
                         self.separation, seed, self.image_shape, rank)
        return synth_generate(spec)


@dataclass
class Metrics:
    mode: str
    seed: int
    config_hash: str
    per_session_accuracy: list = field(default_factory=list)  # (t, accuracy)
    per_session_gap: list = field(default_factory=list)  # (t, gap or nan)
    lam: float = 1.0
    r: float = 0.0
    budget_units: int = 0

    @property
    def average_incremental_accuracy(self):
        return average_incremental_accuracy(self.per_session_accuracy)

    @property
    def mean_gap(self):
        gaps = [g for _, g in self.per_session_gap]
        return float(np.mean(gaps)) if gaps else float("nan")

    def rows(self):
        for (t, acc), (_, gap) in zip(self.per_session_accuracy, self.per_session_gap):
            yield (t, self.mode, self.seed, f"{acc:.6f}", f"{gap:.6f}", f"{self.lam:g}",
                   f"{self.r:.6f}", self.budget_units)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        w.writerows(self.rows())
        return buf.getvalue()


@dataclass
class RunResult:
    config: RunConfig
    metrics: Metrics
    state: object
    losses: list
    dataset: object = None
    last_session: object = None


def resolve_seed(config: RunConfig) -> RunConfig:
    """Apply the CIL_SEED environment override."""
    env = os.environ.get("CIL_SEED")
    if env is None or env == "":
        return config
    try:
        return config.replace(seed=int(env))
    except ValueError as exc:
        raise ConfigError(f"CIL_SEED must be an integer, got {env!r}") from exc


def execute(config: RunConfig) -> RunResult:
    """Run every session of the stream and evaluate after each one."""
    dataset = config.load_data()
    cfg = config.train_config()
    stream_seed = config.seed if config.stream_seed is None else config.stream_seed
    stream = make_stream(dataset.class_count, config.classes_per_session, stream_seed)
    kind = config.effective_codec_kind()
    codec = make_codec(kind, dataset.dims, Fraction(config.fidelity)) if kind else None
    budget_units = int(round(config.budget_samples * dataset.dim))
    state = init_state(dataset.dim, cfg, budget_units, codec)
    metrics = Metrics(config.mode, config.seed, config.config_hash(), lam=config.lam,
                      r=float(codec.cost_ratio()) if codec else 0.0,
                      budget_units=budget_units if codec else 0)
    losses = []
    session = None
    for t in range(1, stream.session_count + 1):
        session = next_session(stream, dataset, t)
        run_session(state, session.train_x, session.train_y, cfg, sink=losses.append)
        acc = evaluate(state.model, session.test_x, session.test_y, config.classifier,
                       state.buffer, state.codecs)
        if state.codec is not None:
            gap = measure_domain_gap(state.model, session.train_x, state.codec.roundtrip(session.train_x))
        else:
            gap = float("nan")
        metrics.per_session_accuracy.append((t, acc))
        metrics.per_session_gap.append((t, gap))
        log.info("session %d: accuracy %.4f gap %.4f", t, acc, gap)
    return RunResult(config, metrics, state, losses, dataset, session)


def write_outputs(result: RunResult, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    m = result.metrics
    (out / "metrics.csv").write_text(m.to_csv())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("t", "phase", "epoch", "loss"))
    for rec in result.losses:
        w.writerow((rec["t"], rec["phase"], rec["epoch"], f"{rec['loss']:.8f}"))
    (out / "losses.csv").write_text(buf.getvalue())
    echo = {
        "config": result.config.to_dict(),
        "config_hash": m.config_hash,
        "per_session_accuracy": [[t, round(a, 6)] for t, a in m.per_session_accuracy],
        "average_incremental_accuracy": (round(m.average_incremental_accuracy, 6)
                                         if len(m.per_session_accuracy) > 1 else None),
    }
    (out / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")
    state = result.state
    if state.buffer is not None:
        (out / "codec.bin").write_bytes(container.dump_codec(state.codec))
        (out / "buffer.bin").write_bytes(container.dump_buffer(state.buffer))


def run_experiment(config: RunConfig) -> Metrics:
    result = execute(config)
    if config.out_dir:
        write_outputs(result, config.out_dir)
    return result.metrics


SWEEP_PARAMS = {"lambda": "lam", "budget": "budget_samples", "fidelity": "fidelity"}


def sweep(config: RunConfig, param, values, seeds=None, out_dir=None):
    """Run ``config`` once per (value, seed); returns a list of summary rows."""
    attr = SWEEP_PARAMS[param]
    seeds = [config.seed] if seeds is None else list(seeds)
    rows = []
    for value in values:
        for seed in seeds:
            sub = None
            if out_dir is not None:
                sub = str(Path(out_dir) / f"{param}={_slug(value)}" / f"seed={seed}")
            run_cfg = config.replace(**{attr: value, "seed": seed, "out_dir": sub})
            m = run_experiment(run_cfg)
            rows.append({
                "param": param, "value": str(value), "mode": m.mode, "seed": seed,
                "lambda": f"{run_cfg.lam:g}", "r": f"{m.r:.6f}", "budget_units": m.budget_units,
                "average_accuracy": f"{m.average_incremental_accuracy:.6f}",
                "mean_gap": f"{m.mean_gap:.6f}",
            })
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "summary.csv").write_text(summary_csv(rows))
    return rows


def summary_csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _slug(value):
    return str(value).replace("/", "_")
