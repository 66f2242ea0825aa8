import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flsim import nn
from flsim.errors import ConfigError, NumericalError

from . import oracles


def random_case(rng, max_width=8, max_batch=4, activation=None):
    depth = rng.integers(1, 3)
    widths = [int(rng.integers(1, max_width + 1)) for _ in range(depth + 1)]
    widths.append(int(rng.integers(2, max_width + 1)))
    act = activation or ("relu", "tanh")[rng.integers(2)]
    spec = nn.ModelSpec(tuple(widths), act)
    layout = spec.layout()
    params = nn.LayeredVector(layout, rng.normal(0, 0.7, layout.dim))
    rows = int(rng.integers(1, max_batch + 1))
    x = rng.uniform(0, 1, (rows, widths[0]))
    y = rng.integers(0, widths[-1], rows)
    return spec, params, (x, y)


def max_relative_error(analytic, numeric):
    return oracles.gradient_relative_error(analytic.values, numeric.values)


def test_layout_groups_follow_dense_layers():
    layout = nn.ModelSpec((3, 4, 2)).layout()
    assert layout.names == ("dense1.weights", "dense1.biases", "dense2.weights", "dense2.biases")
    assert layout.shapes == ((3, 4), (4,), (4, 2), (2,))
    assert layout.dim == 12 + 4 + 8 + 2


def test_parameter_group_shape_must_match():
    with pytest.raises(ConfigError):
        nn.ParameterGroup("w", (2, 2), np.zeros(3))


def test_model_spec_needs_hidden_layer():
    with pytest.raises(ConfigError):
        nn.ModelSpec((4, 2))


def test_forward_zero_params_is_uniform():
    spec = nn.ModelSpec((5, 3, 4))
    params = nn.LayeredVector.zeros(spec.layout())
    probs = nn.forward(spec, params, np.random.default_rng(0).uniform(size=(6, 5)))
    np.testing.assert_array_equal(probs, np.full((6, 4), 0.25))


def test_forward_zero_weights_ignores_input():
    spec = nn.ModelSpec((3, 1, 2))
    params = nn.LayeredVector.zeros(spec.layout())
    params.group("dense2.biases")[:] = [0.3, -0.1]
    a = nn.forward(spec, params, np.array([[0.0, 0.0, 0.0]]))
    b = nn.forward(spec, params, np.array([[1.0, 0.5, 0.2]]))
    np.testing.assert_array_equal(a, b)


def test_forward_rows_sum_to_one():
    rng = np.random.default_rng(1)
    for _ in range(20):
        spec, params, (x, _) = random_case(rng)
        params = nn.scale(params, 10.0)
        probs = nn.forward(spec, params, x)
        assert np.all(probs >= 0)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_forward_rejects_wrong_width():
    spec = nn.ModelSpec((3, 2, 2))
    with pytest.raises(ConfigError):
        nn.forward(spec, nn.LayeredVector.zeros(spec.layout()), np.zeros((1, 4)))


def test_zero_weights_balanced_two_class_loss_is_ln2():
    spec = nn.ModelSpec((2, 3, 2))
    params = nn.LayeredVector.zeros(spec.layout())
    loss, _ = nn.loss_and_gradient(spec, params, (np.array([[0.1, 0.2], [0.7, 0.3]]), np.array([0, 1])))
    assert abs(loss - math.log(2)) < 1e-9


def test_duplicated_batch_gives_same_gradient():
    rng = np.random.default_rng(2)
    spec, params, (x, y) = random_case(rng)
    _, g1 = nn.loss_and_gradient(spec, params, (x, y))
    _, g2 = nn.loss_and_gradient(spec, params, (np.vstack([x, x]), np.concatenate([y, y])))
    np.testing.assert_allclose(g1.values, g2.values, rtol=1e-12, atol=1e-15)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(10):
        spec, params, batch = random_case(rng)
        _, g = nn.loss_and_gradient(spec, params, batch)
        fd = nn.finite_difference_gradient(spec, params, batch, 1e-5)
        assert g.layout == params.layout
        assert max_relative_error(g, fd) < 1e-4


def test_finite_difference_on_one_parameter_quadratic_region():
    # loss(b) for a softmax over logits (b, 0) with label 0 is log(1 + e^-b)
    spec = nn.ModelSpec((1, 1, 2))
    params = nn.LayeredVector.zeros(spec.layout())
    params.group("dense2.biases")[0] = 0.4
    fd = nn.finite_difference_gradient(spec, params, (np.zeros((1, 1)), np.array([0])), 1e-4)
    exact = -1.0 / (1.0 + math.exp(0.4))
    assert abs(fd.group("dense2.biases")[0] - exact) < 1e-8


def test_finite_difference_near_zero_in_saturated_region():
    spec = nn.ModelSpec((1, 1, 2))
    params = nn.LayeredVector.zeros(spec.layout())
    params.group("dense2.biases")[:] = [40.0, -40.0]
    fd = nn.finite_difference_gradient(spec, params, (np.zeros((1, 1)), np.array([0])), 1e-5)
    assert np.max(np.abs(fd.values)) < 1e-12


def test_finite_difference_rejects_bad_step():
    spec = nn.ModelSpec((1, 1, 2))
    with pytest.raises(ConfigError):
        nn.finite_difference_gradient(spec, nn.LayeredVector.zeros(spec.layout()), (np.zeros((1, 1)), [0]), 0)


def test_non_finite_gradient_raises():
    spec = nn.ModelSpec((1, 1, 2))
    params = nn.LayeredVector.zeros(spec.layout())
    params.group(0)[:] = np.nan
    with pytest.raises(NumericalError):
        nn.loss_and_gradient(spec, params, (np.ones((1, 1)), np.array([0])))


def test_invalid_labels_rejected():
    spec = nn.ModelSpec((1, 1, 2))
    with pytest.raises(ConfigError):
        nn.loss_and_gradient(spec, nn.LayeredVector.zeros(spec.layout()), (np.ones((1, 1)), np.array([2])))


def one(v):
    return nn.LayeredVector.from_groups([nn.ParameterGroup("p", (len(v),), np.array(v, float))])


def test_sgd_step():
    state = nn.OptimizerState.create("sgd", one([1.0]).layout, 0.05)
    params, _ = nn.optimizer_step(state, one([1.0]), one([2.0]))
    assert params.values[0] == pytest.approx(0.9, abs=1e-15)
    assert params.values[0] == 1.0 - 0.05 * 2.0


@pytest.mark.parametrize("kind", ["sgd", "adadelta"])
def test_zero_gradient_leaves_params(kind):
    p = one([1.0, -2.0])
    state = nn.OptimizerState.create(kind, p.layout, 1.0)
    new, _ = nn.optimizer_step(state, p, one([0.0, 0.0]))
    assert new == p


def test_adadelta_second_identical_step_is_larger():
    # hand recurrence, rho=0.95, eps=1e-6, g=1:
    # step 1: E[g^2]=0.05, dx=1e-3/sqrt(0.050001)=0.00447209, E[dx^2]=1e-6
    # step 2: E[g^2]=0.0975, dx=sqrt(2e-6)/sqrt(0.097501)=0.00452910
    p = one([0.0])
    state = nn.OptimizerState.create("adadelta", p.layout, 1.0)
    p1, state = nn.optimizer_step(state, p, one([1.0]))
    p2, state = nn.optimizer_step(state, p1, one([1.0]))
    first, second = -p1.values[0], p1.values[0] - p2.values[0]
    assert first == pytest.approx(0.00447209, rel=1e-5)
    assert second == pytest.approx(0.00452910, rel=1e-5)
    assert second > first


def test_optimizer_rejects_non_finite():
    p = one([0.0])
    with pytest.raises(NumericalError):
        nn.optimizer_step(nn.OptimizerState.create("sgd", p.layout, 0.1), p, one([math.inf]))


def test_accumulators_only_for_adadelta():
    p = one([0.0])
    with pytest.raises(ConfigError):
        nn.OptimizerState("sgd", 0.1, accumulators=(p, p))
    with pytest.raises(ConfigError):
        nn.OptimizerState("adadelta", 0.1)


def test_vector_ops_examples():
    assert nn.l2_norm(one([3.0, 4.0])) == 5.0
    v = one([1.0, -2.0, 0.5])
    assert np.all(nn.mean([v, -v]).values == 0)
    two = nn.LayeredVector.from_groups(
        [nn.ParameterGroup("a", (1,), np.array([3.0])), nn.ParameterGroup("b", (1,), np.array([4.0]))]
    )
    assert nn.group_l2_norm(two, 0) == 3.0
    assert nn.group_l2_norm(two, "b") == 4.0


def test_structure_mismatch_raises():
    with pytest.raises(ConfigError):
        nn.add(one([1.0]), one([1.0, 2.0]))


vectors = st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3)


def three_groups(vals):
    return nn.LayeredVector(nn.Layout(("a", "b"), ((1,), (2,))), np.array(vals))


@given(vectors, vectors, st.floats(-10, 10))
def test_linearity(a, b, c):
    a, b = three_groups(a), three_groups(b)
    left = nn.scale(nn.add(a, b), c)
    right = nn.add(nn.scale(a, c), nn.scale(b, c))
    assert left.layout == right.layout
    np.testing.assert_allclose(left.values, right.values, rtol=1e-12, atol=1e-12 * (1 + abs(c) * 2e3))


@given(vectors)
def test_norm_decomposes_over_groups(a):
    v = three_groups(a)
    total = nn.l2_norm(v) ** 2
    parts = sum(nn.group_l2_norm(v, l) ** 2 for l in range(2))
    assert total == pytest.approx(parts, rel=1e-9, abs=1e-300)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gradient_check_property(seed):
    spec, params, batch = random_case(np.random.default_rng(seed))
    _, g = nn.loss_and_gradient(spec, params, batch)
    assert max_relative_error(g, nn.finite_difference_gradient(spec, params, batch)) < 1e-4


def test_sgd_trajectories_bit_identical():
    def trajectory():
        rng = np.random.default_rng(9)
        spec, params, batch = random_case(rng)
        state = nn.OptimizerState.create("sgd", params.layout, 0.1)
        out = []
        for _ in range(5):
            _, g = nn.loss_and_gradient(spec, params, batch)
            params, state = nn.optimizer_step(state, params, g)
            out.append(params.values.tobytes())
        return out

    assert trajectory() == trajectory()


def test_evaluate_tie_break_and_perfect_margin():
    spec = nn.ModelSpec((1, 1, 2))
    zeros = nn.LayeredVector.zeros(spec.layout())
    x = np.zeros((4, 1))
    assert nn.evaluate(spec, zeros, x, np.array([0, 0, 1, 1])) == 0.5
    params = zeros.copy()
    params.array("dense1.weights")[:] = 1.0
    params.array("dense2.weights")[:] = [[-5.0, 5.0]]
    xs = np.array([[-1.0], [2.0]])
    assert nn.evaluate(spec, params, xs, np.array([0, 1])) == 1.0
