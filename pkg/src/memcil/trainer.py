"""Session-by-session training.

One call to :func:`run_session` performs, in order:

1. refit the codec on the new data (PCA only),
2. build duplets (x, x_hat, y) for the new samples,
3. grow the classifier head,
4. train on duplets plus decoded replay exemplars,
5. rank new-class samples with the new extractor and write their codes,
6. adapt the head on the decoded memory with the extractor frozen,
7. snapshot the model as the next session's teacher.

Modes switch off parts of this to reproduce ablations:

=============  ===========================================================
aux_duplet_ca  everything above
aux_duplet     no step 6
aux_plain      step 4 trains on x_hat only (no real samples), no step 6
real_exemplar  identity codec (raw samples in memory), steps 1-7
no_exemplar    no codec and no memory: steps 3, 4 (real x only) and 7
=============  ===========================================================
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from memcil import losses
from memcil.codec import Codec, IdentityCodec
from memcil.errors import BudgetOverflowError, ConfigError, LabelError, StateError
from memcil.memory import MemoryBuffer, capacity, rank_by_herding
from memcil.nn import SGD, Model, SgdConfig, backward_and_step, clone_snapshot

MODES = ("aux_duplet_ca", "aux_duplet", "aux_plain", "real_exemplar", "no_exemplar")


@dataclass
class TrainConfig:
    epochs_duplet: int = 30
    epochs_ca: int = 20
    batch_pairs: int = 32
    learning_rate: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 1e-5
    # explicit (epoch, divisor) schedule for the duplet phase; empty means
    # divide by 5 at 60% and 80% of the phase (same rule for the CA phase)
    schedule: tuple = ()
    lam: float = 1.0
    seed: int = 0
    mode: str = "aux_duplet_ca"
    ca_lr_scale: float = 0.1
    ca_vary_extractor: bool = False
    hidden: tuple = (64, 64)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs_duplet < 1 or self.epochs_ca < 1:
            raise ConfigError("epoch counts must be >= 1")
        if self.batch_pairs < 1:
            raise ConfigError("batch_pairs must be >= 1")
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        self.hidden = tuple(int(h) for h in self.hidden)
        self.schedule = tuple(tuple(s) for s in self.schedule)
        self.duplet_sgd()

    def duplet_sgd(self):
        if self.schedule:
            return SgdConfig(self.learning_rate, self.momentum, self.weight_decay, self.schedule)
        return SgdConfig.with_default_schedule(self.epochs_duplet, self.learning_rate,
                                               self.momentum, self.weight_decay)

    def ca_sgd(self):
        return SgdConfig.with_default_schedule(self.epochs_ca, self.learning_rate * self.ca_lr_scale,
                                               self.momentum, self.weight_decay)

    @property
    def uses_memory(self):
        return self.mode != "no_exemplar"

    @property
    def uses_ca(self):
        return self.mode in ("aux_duplet_ca", "real_exemplar")


@dataclass
class SessionState:
    model: Model
    buffer: MemoryBuffer | None = None
    codec: Codec | None = None
    teacher: Model | None = None
    t: int = 0
    # every codec version still referenced by a stored code
    codecs: dict = field(default_factory=dict)
    events: list = field(default_factory=list)

    @property
    def n_seen(self):
        return self.model.n_classes


def init_state(input_dim, cfg: TrainConfig, budget_units=0, codec=None) -> SessionState:
    model = Model.mlp(input_dim, cfg.hidden, 0, rng=np.random.default_rng([cfg.seed, 0]))
    if not cfg.uses_memory:
        return SessionState(model)
    if codec is None:
        codec = IdentityCodec(input_dim)
    if codec.input_dim != input_dim:
        raise ConfigError(f"codec takes dim {codec.input_dim}, data has {input_dim}")
    if cfg.mode == "real_exemplar" and codec.kind != "identity":
        raise ConfigError("real_exemplar mode stores raw samples; use the identity codec")
    return SessionState(model, MemoryBuffer(budget_units), codec)


def build_duplets(x, y, codec):
    """Pair every sample with its auxiliary version D(E(x))."""
    x = np.asarray(x, dtype=np.float64)
    return x, codec.roundtrip(x), np.asarray(y)


def expand_head(model, new_count, rng=None):
    """Copy of ``model`` with ``new_count`` extra head rows drawn from U(-0.01, 0.01)."""
    if new_count <= 0:
        raise ConfigError("new_count must be positive")
    rng = np.random.default_rng(rng)
    out = clone_snapshot(model)
    rows = rng.uniform(-0.01, 0.01, size=(new_count, model.feature_dim))
    bias = rng.uniform(-0.01, 0.01, size=new_count)
    out.head_weight = np.vstack([model.head_weight, rows])
    out.head_bias = np.concatenate([model.head_bias, bias])
    return out


def _check_new_labels(y, n_old):
    labels = np.unique(y)
    if len(labels) == 0:
        raise LabelError("session has no samples")
    expected = np.arange(n_old + 1, n_old + len(labels) + 1)
    if not np.array_equal(labels, expected):
        raise LabelError(f"new-session labels must be exactly {n_old + 1}..{n_old + len(labels)}, "
                         f"got {labels.tolist()}")
    return len(labels)


def _train_duplet_phase(state, model, x, x_hat, y, replay, p, cfg, rng, sink):
    sgd_cfg = cfg.duplet_sgd()
    opt = SGD(sgd_cfg)
    n, b = len(y), cfg.batch_pairs
    rx, ry = replay
    for epoch in range(cfg.epochs_duplet):
        lr = sgd_cfg.lr_at(epoch)
        perm = rng.permutation(n)
        rperm = rng.permutation(len(ry)) if len(ry) else None
        cursor = 0
        total, steps = 0.0, 0
        for start in range(0, n, b):
            idx = perm[start: start + b]
            if rperm is not None:
                ridx = np.take(rperm, np.arange(cursor, cursor + len(idx)), mode="wrap")
                cursor += len(idx)
                rep = (rx[ridx], ry[ridx])
            else:
                rep = None
            if cfg.mode == "aux_plain":
                fn = lambda m, _: losses.plain_batch_loss(m, state.teacher, (x_hat[idx], y[idx]), rep, p)
            elif cfg.mode == "no_exemplar":
                fn = lambda m, _: losses.plain_batch_loss(m, state.teacher, (x[idx], y[idx]), None, p)
            else:
                fn = lambda m, _: losses.duplet_batch_loss(
                    m, state.teacher, (x[idx], x_hat[idx], y[idx]), rep, p)
            total += backward_and_step(model, fn, None, opt, lr=lr)
            steps += 1
        if sink is not None:
            sink({"t": state.t + 1, "phase": "duplet", "epoch": epoch, "loss": total / steps})


def _update_memory(state, model, x, y, n_old, n_seen):
    codec, buffer = state.codec, state.buffer
    cap = capacity(buffer.budget_units, codec.cost_ratio(), codec.input_dim)
    quota = cap // n_seen
    if quota < 1:
        raise BudgetOverflowError(f"budget holds {cap} codes, cannot keep one for each of {n_seen} classes")
    feats = model.extract_features(x)
    for c in range(n_old + 1, n_seen + 1):
        rows = np.nonzero(y == c)[0]
        rank = rank_by_herding(feats[rows], c)
        ordered = x[rows[rank.ordered_indices]]
        codes = codec.encode_many(ordered, [c] * len(rows))
        buffer.write_new_class(c, codes, min(quota, len(codes)))
    live = set(buffer.codec_ids()) | {codec.codec_id}
    state.codecs = {cid: cd for cid, cd in state.codecs.items() if cid in live}


def _adapt_classifier(state, model, cfg, rng, sink):
    xr, yr = state.buffer.read_all(state.codecs)
    if len(yr) == 0:
        raise StateError("classifier adaptation with an empty memory")
    sgd_cfg = cfg.ca_sgd()
    opt = SGD(sgd_cfg)
    trainable = None if cfg.ca_vary_extractor else set(model.head_parameter_names())
    b = 2 * cfg.batch_pairs
    for epoch in range(cfg.epochs_ca):
        lr = sgd_cfg.lr_at(epoch)
        perm = rng.permutation(len(yr))
        total, steps = 0.0, 0
        for start in range(0, len(yr), b):
            idx = perm[start: start + b]
            fn = lambda m, _: losses.ca_loss(m, xr[idx], yr[idx], train_extractor=cfg.ca_vary_extractor)
            total += backward_and_step(model, fn, None, opt, lr=lr, trainable=trainable)
            steps += 1
        if sink is not None:
            sink({"t": state.t + 1, "phase": "ca", "epoch": epoch, "loss": total / steps})


def run_session(state: SessionState, x, y, cfg: TrainConfig, sink=None) -> SessionState:
    """Train on one batch of new classes; ``y`` must be n_old+1..n_old+m.

    Updates and returns ``state``. ``sink`` receives per-epoch loss records.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n_old = state.n_seen
    new_count = _check_new_labels(y, n_old)
    n_seen = n_old + new_count
    t = state.t + 1
    rng = np.random.default_rng([cfg.seed, t])
    log = state.events

    if cfg.uses_memory:
        if state.codec.kind == "pca":
            state.codec = state.codec.fit_incremental(x)
            log.append(("fit_codec", t))
        state.codecs[state.codec.codec_id] = state.codec
        x, x_hat, y = build_duplets(x, y, state.codec)
        log.append(("build_duplets", t))
    else:
        x_hat = x

    model = expand_head(state.model, new_count, rng)
    log.append(("expand_head", t))

    if cfg.uses_memory and len(state.buffer):
        replay = state.buffer.read_all(state.codecs)
    else:
        replay = (np.empty((0, x.shape[1])), np.empty(0, dtype=np.int64))
    p = losses.LossParams(n_old, new_count, cfg.lam)
    _train_duplet_phase(state, model, x, x_hat, y, replay, p, cfg, rng, sink)
    log.append(("train", t))

    if cfg.uses_memory:
        _update_memory(state, model, x, y, n_old, n_seen)
        log.append(("update_buffer", t))
        if cfg.uses_ca:
            _adapt_classifier(state, model, cfg, rng, sink)
            log.append(("adapt_classifier", t))

    state.model = model
    state.teacher = clone_snapshot(model)
    state.t = t
    log.append(("snapshot_teacher", t))
    return state


def class_means(model, buffer, codecs, n_classes=None):
    """Mean extracted feature of each class's decoded exemplars, rows in class order."""
    n = model.n_classes if n_classes is None else n_classes
    missing = [c for c in range(1, n + 1) if not buffer.per_class.get(c)]
    if missing:
        raise StateError(f"classes without exemplars: {missing}")
    xr, yr = buffer.read_all(codecs)
    feats = model.extract_features(xr)
    return np.vstack([feats[yr == c].mean(axis=0) for c in range(1, n + 1)])


def ncm_predict(model, means, x):
    """Nearest class mean in feature space; ties go to the lowest class id."""
    f = np.atleast_2d(model.extract_features(x))
    d2 = ((f[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1) + 1


def ncm_classify(model, buffer, codecs, x):
    return int(ncm_predict(model, class_means(model, buffer, codecs), np.asarray(x).reshape(1, -1))[0])
