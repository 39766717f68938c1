import numpy as np
import pytest

from memcil.codec import DownsampleCodec, IdentityCodec
from memcil.errors import ProtocolError
from memcil.evaluation import (average_incremental_accuracy, evaluate, export_projection,
                               measure_domain_gap, projection_csv)
from memcil.memory import MemoryBuffer
from memcil.nn import Dense, Model


def _identity(d, n_classes, head=None):
    head = np.zeros((n_classes, d)) if head is None else head
    return Model([Dense(np.eye(d), np.zeros(d), "identity")], head, np.zeros(n_classes), d)


def test_random_predictor_within_binomial_bounds():
    n, count = 5, 6000
    rng = np.random.default_rng(0)
    model = Model.mlp(20, (32,), n, rng=rng)
    model.head_weight = rng.normal(size=model.head_weight.shape)
    x = rng.normal(size=(count, 20))
    y = rng.integers(1, n + 1, size=count)  # labels independent of inputs
    acc = evaluate(model, x, y)
    sigma = np.sqrt((1 / n) * (1 - 1 / n) / count)
    assert abs(acc - 1 / n) < 3 * sigma


def test_perfect_memorizer():
    y = np.array([1, 2, 3, 2, 1])
    x = 5.0 * np.eye(3)[y - 1]
    assert evaluate(_identity(3, 3, np.eye(3)), x, y) == 1.0


def test_head_and_ncm_on_single_class():
    model = _identity(2, 1)
    x = np.array([[1.0, 2.0], [1.0, 2.0]])
    y = np.array([1, 1])
    codec = IdentityCodec(2)
    buf = MemoryBuffer(10)
    buf.write_new_class(1, codec.encode_many(x, [1, 1]), 2)
    assert evaluate(model, x, y, "head") == 1.0
    assert evaluate(model, x, y, "ncm", buf, codec) == 1.0


def test_evaluate_rejects_bad_sets():
    model = _identity(2, 2)
    with pytest.raises(ProtocolError):
        evaluate(model, np.empty((0, 2)), np.empty(0, int))
    with pytest.raises(ProtocolError):
        evaluate(model, np.zeros((1, 2)), np.array([3]))


def test_average_incremental_accuracy_examples():
    assert average_incremental_accuracy([0.80, 0.70, 0.60, 0.50]) == pytest.approx(0.60)
    assert average_incremental_accuracy([0.3] * 4) == pytest.approx(0.3)
    assert average_incremental_accuracy([0.9, 0.4]) == 0.4
    assert average_incremental_accuracy([(1, 0.9), (2, 0.5), (3, 0.7)]) == pytest.approx(0.6)
    with pytest.raises(ProtocolError):
        average_incremental_accuracy([0.9])


def test_first_session_never_counts():
    base = [0.1, 0.5, 0.6]
    assert average_incremental_accuracy(base) == average_incremental_accuracy([0.99] + base[1:])


def test_gap_identity_codec_is_zero():
    model = Model.mlp(6, (8,), 2, rng=0)
    x = np.random.default_rng(1).normal(size=(10, 6))
    assert measure_domain_gap(model, x, IdentityCodec(6).roundtrip(x)) == 0.0


def test_gap_positive_under_heavy_compression():
    model = Model.mlp(64, (16,), 2, rng=0)
    x = np.random.default_rng(1).normal(size=(20, 64))
    assert measure_domain_gap(model, x, DownsampleCodec((8, 8, 1), 4).roundtrip(x)) > 0


def test_gap_degenerate_features_report_zero():
    model = Model.mlp(3, (4,), 1, rng=0)
    x = np.ones((5, 3))
    assert measure_domain_gap(model, x, x + 1) == 0.0


def test_gap_definition():
    model = _identity(2, 1)
    x = np.array([[0.0, 0.0], [3.0, 4.0]])
    # paired distances 1 and 1, single real pair distance 5
    assert measure_domain_gap(model, x, x + [1.0, 0.0]) == pytest.approx(0.2)


def test_projection_of_2d_points_preserves_distances():
    p = np.random.default_rng(0).normal(size=(12, 2)) * [3, 1]
    out = export_projection(p, ["real"] * 12)
    d_in = np.linalg.norm(p[:, None] - p[None], axis=2)
    d_out = np.linalg.norm(out[:, None] - out[None], axis=2)
    assert np.abs(d_in - d_out).max() < 1e-8


def test_projection_collinear_and_counts():
    t = np.linspace(-1, 1, 7)[:, None]
    pts = t * np.array([[1.0, 2.0, -1.0]]) + 0.5
    out = export_projection(pts, ["aux"] * 7)
    assert out.shape == (7, 2)
    assert np.abs(out[:, 1]).max() < 1e-8
    same = export_projection(np.ones((4, 3)), ["real"] * 4)
    assert np.all(same == 0)
    with pytest.raises(ProtocolError):
        export_projection(np.zeros((2, 3)), ["a", "b"])


def test_projection_csv_layout():
    text = projection_csv(np.array([[1.0, -0.5], [0.25, 0.0]]), ["real", "aux"])
    assert text == "p1,p2,tag\n1.000000,-0.500000,real\n0.250000,0.000000,aux\n"
