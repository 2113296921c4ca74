import numpy as np
import pytest

from flux.tensorcore import Tensor, grad_check, gradient_errors, no_grad, ops, parameter
from flux.utils import NumericalError, ShapeError, ValidationError


def test_softmax_of_zeros_is_uniform():
    out = ops.softmax(Tensor([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)


def test_softmax_rows_sum_to_one(rng):
    out = ops.softmax(Tensor(rng.normal(size=(5, 7)) * 10))
    np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(5), atol=1e-12)


def test_softmax_rejects_non_finite():
    with pytest.raises(NumericalError):
        ops.softmax(Tensor([0.0, np.inf]))


def test_layer_norm_of_constant_row_is_near_zero():
    out = ops.layer_norm(Tensor(np.full((1, 8), 3.0)), np.ones(8), np.zeros(8))
    assert np.max(np.abs(out.data)) <= 1e-3


def test_matmul_identity(rng):
    a = rng.normal(size=(3, 3))
    np.testing.assert_array_equal(ops.matmul(Tensor(np.eye(3)), Tensor(a)).data, a)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError) as info:
        ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
    assert "(2, 3)" in info.value.message and "(4, 5)" in info.value.message


def test_add_broadcast_mismatch():
    with pytest.raises(ShapeError):
        ops.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))


def test_gather_scatter_conserves_gradient_mass(rng):
    x = parameter(rng.normal(size=(6, 4)))
    out = ops.gather(x, [0, 3, 3, 5, 1])
    seed = rng.normal(size=out.shape)
    out.backward(seed)
    assert abs(x.grad.sum() - seed.sum()) < 1e-12
    np.testing.assert_allclose(x.grad[3], seed[1] + seed[2])


def test_gather_out_of_range():
    with pytest.raises(ValidationError):
        ops.gather(Tensor(np.zeros((3, 2))), [3])


def test_fan_out_accumulates():
    x = parameter([2.0])
    y = x * x + x
    y.sum().backward()
    np.testing.assert_allclose(x.grad, [5.0])


def test_no_grad_records_nothing():
    x = parameter([1.0, 2.0])
    with no_grad():
        y = (x * 3.0).sum()
    assert not y.requires_grad
    assert y._ctx is None


def test_stop_gradient_blocks_path():
    x = parameter([1.5])
    loss = (x * ops.stop_gradient(x)).sum()
    loss.backward()
    np.testing.assert_allclose(x.grad, [1.5])


def test_interp_matrix_pins_end_points():
    mat = ops.interp_matrix(4, 7)
    np.testing.assert_allclose(mat.sum(axis=1), np.ones(7))
    assert mat[0, 0] == 1.0 and mat[-1, -1] == 1.0


def test_trilinear_resize_identity_and_corners(rng):
    x = rng.normal(size=(3, 4, 4, 2))
    np.testing.assert_array_equal(ops.trilinear_resize(Tensor(x), (3, 4, 4)).data, x)
    up = ops.trilinear_resize(Tensor(x), (5, 7, 7)).data
    np.testing.assert_allclose(up[0, 0, 0], x[0, 0, 0], atol=1e-12)
    np.testing.assert_allclose(up[-1, -1, -1], x[-1, -1, -1], atol=1e-12)


def test_depthwise_conv_identity_kernel(rng):
    x = rng.normal(size=(3, 2, 2, 4))
    kernel = np.zeros((3, 3, 3, 4))
    kernel[1, 1, 1] = 1.0
    np.testing.assert_allclose(ops.depthwise_conv3d(Tensor(x), Tensor(kernel)).data, x)


def test_depthwise_conv_rejects_even_kernel():
    with pytest.raises(ValidationError):
        ops.depthwise_conv3d(Tensor(np.zeros((2, 2, 2, 1))), Tensor(np.zeros((2, 2, 2, 1))))


def test_smooth_l1_matches_elementwise_definition(rng):
    pred, target = rng.normal(size=(5, 8)) * 2, rng.normal(size=(5, 8))
    d = np.abs(pred - target)
    expected = np.where(d < 1.0, 0.5 * d * d, d - 0.5).mean()
    assert abs(ops.smooth_l1(Tensor(pred), Tensor(target)).item() - expected) < 1e-12


def test_cross_entropy_uniform_logits():
    loss = ops.cross_entropy(Tensor(np.zeros(4)), 2)
    assert abs(loss.item() - np.log(4.0)) < 1e-12


def test_cross_entropy_label_out_of_range():
    with pytest.raises(ValidationError):
        ops.cross_entropy(Tensor(np.zeros(3)), 3)


def test_grad_check_linear():
    p = parameter(np.arange(6.0))
    assert grad_check(lambda: p.sum(), p) < 1e-10


def test_grad_check_quadratic(rng):
    p = parameter(rng.normal(size=(4, 3)))
    assert grad_check(lambda: (p * p).sum() * 0.5, p, eps=1e-5) < 1e-8
    np.testing.assert_allclose(p.grad, p.data)


def test_grad_check_needs_scalar():
    p = parameter(np.ones(3))
    with pytest.raises(ValidationError):
        grad_check(lambda: p * 2.0, p)


PRIMITIVE_CASES = {
    "gelu": lambda x, y: ops.gelu(x).sum(),
    "softmax": lambda x, y: (ops.softmax(x) * y).sum(),
    "layer_norm": lambda x, y: (ops.layer_norm(x, y[0] + 1.0, y[1]) * y).sum(),
    "matmul": lambda x, y: (x @ y.transpose()).sum(),
    "mean_axis": lambda x, y: (x.mean(axis=1) * y[:, 0]).sum(),
    "transpose_reshape": lambda x, y: (x.transpose().reshape(-1) * y.transpose().reshape(-1)).sum(),
    "index": lambda x, y: (x[1:, ::2] * 2.0).sum(),
    "concat": lambda x, y: (ops.concat([x, y], axis=0) * ops.concat([y, x], axis=0)).sum(),
    "l2_normalize": lambda x, y: (ops.l2_normalize(x) * y).sum(),
    "cross_entropy": lambda x, y: ops.cross_entropy(x * y, [0, 2, 1, 3]),
    "smooth_l1": lambda x, y: ops.smooth_l1(x, y * 0.1),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradients(name, rng):
    x = parameter(rng.normal(size=(4, 4)))
    y = parameter(rng.normal(size=(4, 4)))
    fn = PRIMITIVE_CASES[name]
    errors = gradient_errors(lambda: fn(x, y), {"x": x, "y": y})
    assert max(errors.values()) < 1e-6


def test_conv_and_resize_gradients(rng):
    x = parameter(rng.normal(size=(2, 3, 3, 2)))
    kernel = parameter(rng.normal(size=(3, 3, 3, 2)))
    probe = rng.normal(size=(3, 2, 4, 2))

    def loss():
        resized = ops.trilinear_resize(ops.depthwise_conv3d(x, kernel), (3, 2, 4))
        return (resized * probe).sum()

    assert grad_check(loss, [x, kernel]) < 1e-6
