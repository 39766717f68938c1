"""Accuracy protocol, domain-gap statistic and 2-D feature projection."""

from __future__ import annotations

import csv
import io

import numpy as np

from memcil.errors import ConfigError, ProtocolError
from memcil.trainer import class_means, ncm_predict


def predict_head(model, x):
    """Top-1 class id from the head scores; ties go to the lowest id."""
    return np.argmax(model.logits(np.atleast_2d(x)), axis=1) + 1


def evaluate(model, x, y, classifier="head", buffer=None, codecs=None):
    """Fraction of correct top-1 predictions on a test set of seen classes."""
    y = np.asarray(y)
    if len(y) == 0:
        raise ProtocolError("empty test set")
    if y.min() < 1 or y.max() > model.n_classes:
        raise ProtocolError(f"test labels outside 1..{model.n_classes}")
    if classifier == "head":
        pred = predict_head(model, x)
    elif classifier == "ncm":
        if buffer is None or codecs is None:
            raise ConfigError("ncm evaluation needs the memory buffer and its codecs")
        pred = ncm_predict(model, class_means(model, buffer, codecs), x)
    else:
        raise ConfigError(f"unknown classifier {classifier!r}")
    return float(np.mean(pred == y))


def average_incremental_accuracy(per_session):
    """Mean accuracy over sessions 2..T (the first session is not incremental).

    Accepts plain accuracies or ``(t, accuracy)`` pairs.
    """
    accs = [a[1] if isinstance(a, (tuple, list)) else a for a in per_session]
    if len(accs) < 2:
        raise ProtocolError("average incremental accuracy needs at least two sessions")
    return float(np.mean(accs[1:]))


def measure_domain_gap(model, x, x_hat):
    """Mean feature distance between paired real and auxiliary samples,
    divided by the mean pairwise distance among the real features.

    Returns 0 when the real features are all identical.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    x_hat = np.atleast_2d(np.asarray(x_hat, dtype=np.float64))
    if len(x) == 0 or x.shape != x_hat.shape:
        raise ProtocolError("domain gap needs equally many real and auxiliary samples")
    fr = model.extract_features(x)
    fa = model.extract_features(x_hat)
    paired = np.linalg.norm(fr - fa, axis=1).mean()
    n = len(fr)
    if n < 2:
        return 0.0
    sq = (fr ** 2).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * fr @ fr.T, 0.0)
    iu = np.triu_indices(n, k=1)
    scale = np.sqrt(d2[iu]).mean()
    if scale <= 1e-12:
        return 0.0
    return float(paired / scale)


def export_projection(features, tags):
    """Project features onto their top two principal directions.

    Returns an ``(n, 2)`` array; a missing second direction is padded with
    zeros.
    """
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if len(f) < 3:
        raise ProtocolError("projection needs at least three points")
    if len(tags) != len(f):
        raise ProtocolError("one tag per point required")
    centred = f - f.mean(axis=0)
    _, s, vt = np.linalg.svd(centred, full_matrices=False)
    rank = int(np.sum(s > 1e-10 * max(s[0], 1e-300))) if len(s) else 0
    out = np.zeros((len(f), 2))
    k = min(2, rank)
    out[:, :k] = centred @ vt[:k].T
    return out


def projection_csv(points, tags):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["p1", "p2", "tag"])
    for (a, b), tag in zip(points, tags):
        w.writerow([f"{a:.6f}", f"{b:.6f}", tag])
    return buf.getvalue()
