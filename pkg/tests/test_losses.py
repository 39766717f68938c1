import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memcil import losses
from memcil.errors import EmptyBatchError, LabelError
from memcil.losses import EPS, LossParams, entropy, sample_loss
from memcil.nn import SGD, Model, SgdConfig, backward_and_step

LOG2 = np.log(2.0)


def test_entropy_examples():
    assert entropy(0.5, 1) == pytest.approx(0.6931, abs=1e-4)
    assert entropy(1 - EPS, 1) == pytest.approx(0.0, abs=1e-6)
    assert entropy(0.9, 0) == pytest.approx(2.3026, abs=1e-4)


def test_entropy_clamps_extremes():
    assert np.isfinite(entropy(0.0, 1)) and np.isfinite(entropy(1.0, 0))
    assert entropy(0.0, 1) == pytest.approx(-np.log(EPS))


def test_cls_two_log2_terms():
    b = sample_loss([0.3, 0.8, 0.5, 0.5], None, 3, LossParams(2, 2))
    assert b.cls == pytest.approx(2 * LOG2, abs=1e-12)
    assert round(b.cls, 4) == 1.3863
    assert b.dis == 0.0


def test_dis_at_teacher_is_minimum():
    p = LossParams(2, 2)
    teacher = np.array([0.5, 0.5])
    base = sample_loss([0.5, 0.5, 0.1, 0.9], teacher, 4, p)
    assert base.dis == pytest.approx(2 * LOG2)
    rng = np.random.default_rng(0)
    for _ in range(200):
        s = np.clip(teacher + rng.normal(scale=0.2, size=2), 0.01, 0.99)
        assert sample_loss([*s, 0.1, 0.9], teacher, 4, p).dis >= base.dis


def test_lambda_zero_total_equals_cls():
    b = sample_loss([0.2, 0.7, 0.4], [0.9, 0.1], 3, LossParams(2, 1, lam=0.0))
    assert b.total == b.cls


def test_label_out_of_range():
    with pytest.raises(LabelError):
        sample_loss([0.5, 0.5], None, 3, LossParams(0, 2))
    with pytest.raises(LabelError):
        sample_loss([0.5, 0.5], None, 0, LossParams(0, 2))


probs = st.floats(min_value=1e-6, max_value=1 - 1e-6)


@settings(max_examples=200, deadline=None)
@given(st.lists(probs, min_size=5, max_size=5), st.lists(probs, min_size=2, max_size=2),
       st.integers(3, 5), st.floats(0, 10))
def test_breakdown_invariants(scores, teacher, y, lam):
    p1 = LossParams(2, 3, lam)
    p2 = LossParams(2, 3, 2 * lam)
    b1 = sample_loss(scores, teacher, y, p1)
    b2 = sample_loss(scores, teacher, y, p2)
    assert b1.cls >= 0 and b1.dis >= 0
    assert abs(b1.total - (b1.cls + lam * b1.dis)) <= 1e-10 * max(1.0, b1.total)
    # affine in lambda with slope dis
    assert abs((b2.total - b1.total) - lam * b1.dis) <= 1e-10 * max(1.0, b2.total)


def _model(seed, d=4, n=4):
    rng = np.random.default_rng(seed)
    m = Model.mlp(d, (6,), n, rng=rng)
    m.head_weight = rng.normal(size=m.head_weight.shape)
    return m, rng


def _per_sample_losses(model, teacher, x, y, p):
    scores = model.forward(x)
    tscores = teacher.forward(x) if teacher is not None else [None] * len(x)
    return np.array([sample_loss(s, t, yy, p).total for s, t, yy in zip(scores, tscores, y)])


def test_duplet_loss_matches_definition():
    m, rng = _model(0)
    teacher = Model.mlp(4, (6,), 2, rng=rng)
    p = LossParams(2, 2, lam=0.7)
    x = rng.normal(size=(5, 4))
    xh = x + 0.2 * rng.normal(size=x.shape)
    y = rng.integers(3, 5, size=5)
    rx, ry = rng.normal(size=(3, 4)), rng.integers(1, 3, size=3)
    loss, _ = losses.duplet_batch_loss(m, teacher, (x, xh, y), (rx, ry), p)
    l1 = _per_sample_losses(m, teacher, rx, ry, p).mean()
    l2 = (_per_sample_losses(m, teacher, x, y, p).sum()
          + _per_sample_losses(m, teacher, xh, y, p).sum()) / (2 * len(y))
    assert loss == pytest.approx(l1 + l2, rel=1e-10)


def test_duplet_loss_empty_replay_is_duplet_term_only():
    m, rng = _model(1)
    p = LossParams(0, 4)
    x = rng.normal(size=(4, 4))
    xh = x + 0.1
    y = np.array([1, 2, 3, 4])
    a, _ = losses.duplet_batch_loss(m, None, (x, xh, y), None, p)
    b, _ = losses.duplet_batch_loss(m, None, (x, xh, y), (np.empty((0, 4)), np.empty(0, int)), p)
    expected = (_per_sample_losses(m, None, x, y, p).sum()
                + _per_sample_losses(m, None, xh, y, p).sum()) / 8
    assert a == pytest.approx(expected, rel=1e-10)
    assert a == b


def test_duplet_with_identity_pairs_is_plain_mean():
    m, rng = _model(2)
    p = LossParams(0, 4)
    x = rng.normal(size=(6, 4))
    y = rng.integers(1, 5, size=6)
    loss, _ = losses.duplet_batch_loss(m, None, (x, x, y), None, p)
    assert loss == pytest.approx(_per_sample_losses(m, None, x, y, p).mean(), rel=1e-12)


def test_empty_batches_raise():
    m, _ = _model(0)
    p = LossParams(0, 4)
    empty = (np.empty((0, 4)), np.empty((0, 4)), np.empty(0, int))
    with pytest.raises(EmptyBatchError):
        losses.duplet_batch_loss(m, None, empty, None, p)
    with pytest.raises(EmptyBatchError):
        losses.ca_loss(m, np.empty((0, 4)), np.empty(0, int))


def test_ca_loss_single_sample_two_log2():
    m = Model.mlp(3, (4,), 2, rng=0)  # zero head: scores (0.5, 0.5)
    loss, _ = losses.ca_loss(m, np.ones((1, 3)), [1])
    assert loss == pytest.approx(2 * LOG2, abs=1e-12)
    assert round(loss, 4) == 1.3863


def test_ca_gradients_cover_head_only():
    m, rng = _model(3)
    x = rng.normal(size=(5, 4))
    _, grads = losses.ca_loss(m, x, rng.integers(1, 5, size=5))
    assert set(grads) == set(m.head_parameter_names())


def test_ca_step_keeps_extractor_bit_identical():
    m, rng = _model(4)
    x, y = rng.normal(size=(5, 4)), rng.integers(1, 5, size=5)
    before = {n: m.parameters()[n].copy() for n in m.extractor_parameter_names()}
    backward_and_step(m, lambda mm, _: losses.ca_loss(mm, x, y), None, SGD(SgdConfig(0.5)))
    for n, w in before.items():
        assert m.parameters()[n].tobytes() == w.tobytes()


def test_ca_converges_near_zero_on_separable_set():
    rng = np.random.default_rng(0)
    x = np.vstack([rng.normal(-4, 0.3, size=(10, 2)), rng.normal(4, 0.3, size=(10, 2))])
    y = np.repeat([1, 2], 10)
    m = Model.mlp(2, (8,), 2, rng=1)
    opt = SGD(SgdConfig(0.5, momentum=0.9, weight_decay=0.0))
    for _ in range(300):
        backward_and_step(m, lambda mm, _: losses.ca_loss(mm, x, y), None, opt)
    assert losses.ca_loss(m, x, y)[0] < 0.02


def test_teacher_weight_zero_without_teacher():
    targets, cw = losses.build_targets([3, 4], None, LossParams(2, 2, lam=5.0))
    np.testing.assert_array_equal(cw, [0, 0, 1, 1])
    np.testing.assert_array_equal(targets, [[0, 0, 1, 0], [0, 0, 0, 1]])
