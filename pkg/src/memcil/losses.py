"""Losses for duplet training and classifier adaptation.

Class ids are 1-based. With ``n_old`` classes already known and ``n_new``
added this session, a sample's loss is

    l = sum_{k new} BCE(F_k(x), [y == k]) + lam * sum_{k old} BCE(F_k(x), T_k(x))

where T is the frozen teacher. The training path evaluates BCE from logits
(``softplus(z) - t*z``), which equals the clamped probability form whenever
the score lies inside [EPS, 1 - EPS] and keeps gradients alive outside it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from memcil import kernels
from memcil.errors import ConfigError, EmptyBatchError, LabelError, ShapeError

EPS = 1e-7


def entropy(y_hat, y):
    """Binary cross-entropy -[y log p + (1-y) log(1-p)] with p clamped to [EPS, 1-EPS]."""
    p = np.clip(y_hat, EPS, 1.0 - EPS)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


@dataclass(frozen=True)
class LossParams:
    n_old: int
    n_new: int
    lam: float = 1.0

    def __post_init__(self):
        if self.n_old < 0 or self.n_new < 0:
            raise ConfigError("class counts must be non-negative")
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")

    @property
    def n_total(self):
        return self.n_old + self.n_new

    @property
    def old_range(self):
        return range(1, self.n_old + 1)

    @property
    def new_range(self):
        return range(self.n_old + 1, self.n_total + 1)


@dataclass(frozen=True)
class LossBreakdown:
    cls: float
    dis: float
    total: float


def _check_labels(y, n_total):
    y = np.asarray(y)
    if y.size and (y.min() < 1 or y.max() > n_total):
        raise LabelError(f"labels must lie in 1..{n_total}, got range {y.min()}..{y.max()}")
    return y.astype(np.int64)


def sample_loss(scores, teacher_scores, y, p: LossParams) -> LossBreakdown:
    """Classification + distillation loss of one sample from its scores."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (p.n_total,):
        raise ShapeError(f"expected {p.n_total} scores, got {scores.shape}")
    y = int(_check_labels([y], p.n_total)[0])
    new = np.arange(p.n_old, p.n_total)
    cls = float(entropy(scores[new], (new + 1 == y).astype(np.float64)).sum())
    dis = 0.0
    if teacher_scores is not None and p.n_old:
        teacher_scores = np.asarray(teacher_scores, dtype=np.float64)
        if teacher_scores.shape != (p.n_old,):
            raise ShapeError(f"expected {p.n_old} teacher scores, got {teacher_scores.shape}")
        dis = float(entropy(scores[: p.n_old], teacher_scores).sum())
    return LossBreakdown(cls, dis, cls + p.lam * dis)


def build_targets(y, teacher_probs, p: LossParams):
    """Per-class targets and class weights for a batch.

    Old columns hold the teacher's scores (weight lam), new columns the
    indicator of the true label (weight 1). Without a teacher the old
    columns get weight 0.
    """
    y = _check_labels(y, p.n_total)
    targets = np.zeros((y.shape[0], p.n_total))
    class_weights = np.ones(p.n_total)
    new_rows = np.nonzero(y > p.n_old)[0]
    targets[new_rows, y[new_rows] - 1] = 1.0
    if p.n_old:
        if teacher_probs is None:
            class_weights[: p.n_old] = 0.0
        else:
            targets[:, : p.n_old] = teacher_probs
            class_weights[: p.n_old] = p.lam
    return targets, class_weights


def weighted_loss(model, teacher, x, y, sample_weights, p: LossParams, extractor=True):
    """sum_i w_i * l(x_i, y_i) and its gradients w.r.t. the model parameters."""
    if model.n_classes != p.n_total:
        raise ShapeError(f"model has {model.n_classes} outputs, loss expects {p.n_total}")
    teacher_probs = None
    if teacher is not None and p.n_old:
        if teacher.n_classes != p.n_old:
            raise ShapeError(f"teacher has {teacher.n_classes} outputs, expected {p.n_old}")
        teacher_probs = teacher.forward(x)
    targets, class_weights = build_targets(y, teacher_probs, p)
    logits, acts = model.forward_cached(x)
    loss, grad_logits = kernels.sigmoid_bce(logits, targets, class_weights, sample_weights)
    return loss, model.backward(acts, grad_logits, extractor=extractor)


def _stack(groups):
    xs, ys, ws = [], [], []
    for x, y, w in groups:
        if len(y):
            xs.append(np.asarray(x, dtype=np.float64))
            ys.append(np.asarray(y))
            ws.append(np.full(len(y), w))
    return np.vstack(xs), np.concatenate(ys), np.concatenate(ws)


def duplet_batch_loss(model, teacher, duplets, replay, p: LossParams):
    """Replay term plus duplet term, with exact gradients.

    ``duplets`` is ``(x, x_hat, y)`` for new-class samples, ``replay`` is
    ``(x_hat, y)`` for stored exemplars (may be empty). The replay term is the
    mean loss over replay samples; the duplet term sums the losses of every
    real and auxiliary sample and divides by their total count.
    """
    x, x_hat, y = duplets
    rx, ry = replay if replay is not None else (np.empty((0, model.input_dim)), np.empty(0, int))
    n_pairs, n_replay = len(y), len(ry)
    if n_pairs == 0 and n_replay == 0:
        raise EmptyBatchError("duplet batch and replay are both empty")
    groups = []
    if n_replay:
        groups.append((rx, ry, 1.0 / n_replay))
    if n_pairs:
        groups.append((x, y, 1.0 / (2 * n_pairs)))
        groups.append((x_hat, y, 1.0 / (2 * n_pairs)))
    xs, ys, ws = _stack(groups)
    return weighted_loss(model, teacher, xs, ys, ws, p)


def plain_batch_loss(model, teacher, samples, replay, p: LossParams):
    """Replay term plus the mean loss over single (non-paired) new samples."""
    sx, sy = samples
    rx, ry = replay if replay is not None else (np.empty((0, model.input_dim)), np.empty(0, int))
    if len(sy) == 0 and len(ry) == 0:
        raise EmptyBatchError("sample batch and replay are both empty")
    groups = []
    if len(ry):
        groups.append((rx, ry, 1.0 / len(ry)))
    if len(sy):
        groups.append((sx, sy, 1.0 / len(sy)))
    xs, ys, ws = _stack(groups)
    return weighted_loss(model, teacher, xs, ys, ws, p)


def ca_loss(model, x, y, train_extractor=False):
    """Classifier-adaptation loss: mean over samples of the all-class BCE
    against the true-label indicator. Gradients cover the head only unless
    ``train_extractor`` is set.
    """
    y = np.asarray(y)
    if len(y) == 0:
        raise EmptyBatchError("classifier adaptation needs at least one sample")
    p = LossParams(0, model.n_classes)
    w = np.full(len(y), 1.0 / len(y))
    return weighted_loss(model, None, np.asarray(x, dtype=np.float64), y, w, p, extractor=train_extractor)
