import numpy as np
import pytest

from app.core.autodiff import Tape, forward, grad_check
from app.core.errors import BackwardBeforeForwardError, NonScalarOutputError, ShapeError


def _params(seed=0, **shapes):
    rng = np.random.default_rng(seed)
    return {name: rng.standard_normal(shape) for name, shape in shapes.items()}


def test_mlp_gradients_match_finite_differences():
    params = _params(w1=(3, 4), b1=(4,), w2=(4, 2))
    x = np.random.default_rng(1).standard_normal((5, 3))

    def program(tape, x):
        p = tape.params
        h = tape.tanh(tape.constant(x) @ p["w1"] + p["b1"])
        return tape.mean(tape.square(h @ p["w2"]))

    report = grad_check(program, params, x)
    assert report.passed, report.flagged
    assert report.worst < 1e-4


def test_layer_norm_and_softmax_gradients():
    params = _params(x=(2, 3, 5), g=(5,), b=(5,))
    params["g"] = 1.0 + 0.1 * params["g"]

    def program(tape):
        p = tape.params
        y = tape.layer_norm(p["x"], p["g"], p["b"])
        s = tape.softmax(y, axis=-1)
        return tape.sum(s * tape.constant(np.arange(5.0)))

    assert grad_check(program, params).passed


def test_log_softmax_cross_entropy_with_mask():
    params = _params(logits=(2, 4, 6))
    targets = np.array([[1, 2, 3, 4], [5, 0, 1, 2]])
    mask = np.array([[0, 1, 1, 1], [1, 1, 0, 0]], dtype=float)

    def program(tape):
        return tape.cross_entropy(tape.params["logits"], targets, mask)

    tape, loss = forward(program, params)
    log_probs = params["logits"] - np.log(np.exp(params["logits"]).sum(-1, keepdims=True))
    picked = np.take_along_axis(log_probs, targets[..., None], -1)[..., 0]
    assert float(loss.value) == pytest.approx(-(picked * mask).sum() / mask.sum())
    assert grad_check(program, params).passed


def test_embedding_and_gather_accumulate_repeated_ids():
    params = _params(table=(5, 3))
    ids = np.array([[0, 2, 2], [4, 0, 1]])

    def program(tape):
        e = tape.embedding(tape.params["table"], ids)
        return tape.sum(tape.gather(e, np.array([[0, 1, 2], [2, 2, 0]])))

    report = grad_check(program, params)
    assert report.passed
    tape, out = forward(program, params)
    grads = tape.backward()
    # unused row gets no gradient
    assert np.all(grads["table"][3] == 0.0)


def test_batched_matmul_broadcast_and_transpose():
    params = _params(a=(2, 3, 4), b=(4, 5))

    def program(tape):
        p = tape.params
        out = tape.transpose(p["a"] @ p["b"], (0, 2, 1))
        return tape.mean(tape.reshape(out, (2, 15)) * 0.5)

    assert grad_check(program, params).passed


def test_minimum_tie_sends_gradient_to_first_argument():
    params = {"a": np.array([1.0, 2.0]), "b": np.array([1.0, 3.0])}

    def program(tape):
        return tape.sum(tape.minimum(tape.params["a"], tape.params["b"]))

    tape, _ = forward(program, params)
    grads = tape.backward()
    np.testing.assert_array_equal(grads["a"], [1.0, 1.0])
    np.testing.assert_array_equal(grads["b"], [0.0, 0.0])


def test_clip_blocks_gradient_outside_range():
    params = {"x": np.array([-2.0, 0.5, 3.0])}

    def program(tape):
        return tape.sum(tape.clip(tape.params["x"], -1.0, 1.0))

    tape, out = forward(program, params)
    assert float(out.value) == pytest.approx(0.5)
    np.testing.assert_array_equal(tape.backward()["x"], [0.0, 1.0, 0.0])


def test_unused_parameter_gets_zero_gradient():
    params = _params(used=(2,), unused=(3,))
    tape, _ = forward(lambda t: t.sum(t.exp(t.params["used"])), params)
    grads = tape.backward()
    assert set(grads) == {"used", "unused"}
    np.testing.assert_array_equal(grads["unused"], np.zeros(3))


def test_backward_without_recorded_forward_raises():
    tape = Tape(_params(x=(2,)), record=False)
    out = tape.sum(tape.params["x"])
    with pytest.raises(BackwardBeforeForwardError):
        tape.backward(out)
    with pytest.raises(BackwardBeforeForwardError):
        Tape().backward()


def test_shape_mismatch_reports_op_and_shapes():
    tape = Tape()
    with pytest.raises(ShapeError) as info:
        tape.matmul(tape.constant(np.ones((2, 3))), tape.constant(np.ones((2, 3))))
    assert "matmul" in info.value.detail
    with pytest.raises(ShapeError):
        tape.add(np.ones(3), np.ones(4))


def test_grad_check_rejects_non_scalar_output():
    with pytest.raises(NonScalarOutputError):
        grad_check(lambda t: t.params["x"] * 2.0, _params(x=(3,)))


def test_var_operators_compose():
    params = {"x": np.array([1.0, 2.0])}

    def program(tape):
        x = tape.params["x"]
        return tape.sum((3.0 - x) * x / 2.0 + -x)

    tape, out = forward(program, params)
    assert float(out.value) == pytest.approx((2 * 1 / 2 - 1) + (1 * 2 / 2 - 2))
    assert grad_check(program, params).passed
