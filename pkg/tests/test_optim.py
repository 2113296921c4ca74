import numpy as np
import pytest

from flux.services.optim import AdamW, cosine_lr, decays
from flux.tensorcore import parameter
from flux.utils import NumericalError, ValidationError


def test_cosine_schedule():
    assert cosine_lr(0, 100, 1.0, 0.1) == pytest.approx(0.1)
    assert cosine_lr(9, 100, 1.0, 0.1) == pytest.approx(1.0)
    assert cosine_lr(10, 100, 1.0, 0.1) == pytest.approx(1.0)
    assert cosine_lr(55, 100, 1.0, 0.1) == pytest.approx(0.5)
    assert cosine_lr(100, 100, 1.0, 0.1, min_lr=0.01) == pytest.approx(0.01)
    assert cosine_lr(0, 0, 0.3, 0.1) == 0.3


def test_schedule_without_warmup_starts_at_base():
    assert cosine_lr(0, 10, 2e-3, 0.0) == pytest.approx(2e-3)


@pytest.mark.parametrize(
    "name, shape, expected",
    [
        ("blocks.0.attn.qkv.weight", (4, 12), True),
        ("blocks.0.attn.qkv.bias", (12,), False),
        ("blocks.0.norm1.weight", (4,), False),
        ("pos_embed.table", (2, 2, 2, 4), False),
        ("pos_embed.conv", (3, 3, 3, 4), False),
        ("cls_token", (4,), False),
        ("head.weight", (4, 2), True),
    ],
)
def test_weight_decay_targets(name, shape, expected):
    assert decays(name, np.zeros(shape)) is expected


def test_first_step_moves_by_lr():
    w = parameter(np.array([1.0, -2.0, 3.0]))
    w.grad = np.array([0.5, -4.0, 0.0])
    opt = AdamW({"w": w}, lr=0.1, weight_decay=0.0)
    opt.step()
    np.testing.assert_allclose(w.data, [0.9, -1.9, 3.0], atol=1e-6)


def test_decoupled_decay_applies_to_matrices_only():
    m = parameter(np.ones((2, 2)))
    b = parameter(np.ones(2))
    m.grad, b.grad = np.zeros((2, 2)), np.zeros(2)
    AdamW({"m": m, "b": b}, lr=0.1, weight_decay=0.5).step()
    np.testing.assert_allclose(m.data, 0.95)
    np.testing.assert_allclose(b.data, 1.0)


def test_frozen_and_gradless_params_stay():
    a, b = parameter(np.ones(2)), parameter(np.ones(2))
    a.grad = np.ones(2)
    opt = AdamW({"a": a, "b": b}, lr=0.1, frozen=["a"])
    opt.step()
    np.testing.assert_array_equal(a.data, 1.0)
    np.testing.assert_array_equal(b.data, 1.0)


def test_non_finite_gradient_raises():
    w = parameter(np.ones(2))
    w.grad = np.array([1.0, np.nan])
    with pytest.raises(NumericalError):
        AdamW({"w": w}).step()


def test_invalid_hyperparameters():
    with pytest.raises(ValidationError):
        AdamW({}, lr=-1.0)
    with pytest.raises(ValidationError):
        AdamW({}, betas=(1.0, 0.9))
