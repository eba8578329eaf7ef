import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from noisygrade import gradcheck
from noisygrade.model import (
    PARAM_NAMES,
    ModelParams,
    OptimizerState,
    adam_step,
    backward,
    backward_and_step,
    epoch_lr,
    forward,
    init_head,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from noisygrade.numcore import InvalidArgument, NumericError, finite_difference_gradient, seeded_rng

DIMS = (4, 8, 8, 5)


def test_init_is_deterministic():
    a = init_params(DIMS, seeded_rng(7, 0))
    b = init_params(DIMS, seeded_rng(7, 0))
    for name in PARAM_NAMES:
        np.testing.assert_array_equal(a[name], b[name])


@given(st.tuples(*(st.integers(1, 12) for _ in range(4))), st.integers(0, 2**32))
def test_init_weight_bounds_and_zero_biases(dims, seed):
    params = init_params(dims, seeded_rng(seed, 0))
    for name, t in params.tensors.items():
        if t.ndim == 1:
            assert np.all(t == 0.0)
        else:
            assert np.all(np.abs(t) <= 1.0 / np.sqrt(t.shape[1]))


def test_init_rejects_zero_dims():
    with pytest.raises(InvalidArgument):
        init_params((4, 0, 8, 5), seeded_rng(0, 0))


def test_zero_weights_give_uniform_output():
    params = init_params(DIMS, seeded_rng(0, 0))
    for t in params.tensors.values():
        t[...] = 0.0
    _, p, _ = forward(params, np.arange(4.0))
    np.testing.assert_array_equal(p, np.full(5, 0.2))


def test_forward_is_pure_and_normalised(rng):
    for _ in range(100):
        params = init_params(DIMS, rng)
        x = rng.normal(size=4)
        z1, p1, _ = forward(params, x)
        z2, p2, _ = forward(params, x)
        np.testing.assert_array_equal(z1, z2)
        np.testing.assert_array_equal(p1, p2)
        assert z1.shape == (8,)
        assert np.all((p1 > 0) & (p1 < 1))
        assert abs(p1.sum() - 1.0) < 1e-12


def test_forward_dimension_mismatch():
    params = init_params(DIMS, seeded_rng(0, 0))
    with pytest.raises(InvalidArgument):
        forward(params, np.zeros(3))


def test_init_head_keeps_encoder():
    params = init_params(DIMS, seeded_rng(0, 0))
    fresh = init_head(params, seeded_rng(1, 0))
    for name in ("enc.w1", "enc.b1", "enc.w2", "enc.b2"):
        np.testing.assert_array_equal(fresh[name], params[name])
    assert not np.array_equal(fresh["head.w"], params["head.w"])


def test_full_model_gradient_matches_finite_differences(rng):
    # squared-error on logits and features exercises both upstream paths
    params = init_params(DIMS, rng)
    x = rng.normal(size=(5, 4))
    tz = rng.normal(size=(5, 8))
    tp = rng.dirichlet(np.ones(5), size=5)

    def objective(pr):
        z, p, cache = forward(pr, x)
        value = 0.5 * np.sum((z - tz) ** 2) + np.sum(p * np.log(tp))
        g_p = np.log(tp)
        g_logits = p * (g_p - np.sum(g_p * p, axis=1, keepdims=True))
        return value, backward(pr, cache, g_logits, z - tz)

    _, grads = objective(params)
    for name, tensor in params.tensors.items():
        def f(v, name=name):
            trial = params.copy()
            trial.tensors[name] = v
            return objective(trial)[0]
        numeric = finite_difference_gradient(f, tensor, 1e-5)
        assert gradcheck.rel_error(grads[name], numeric) < 1e-4, name


def test_every_loss_reaches_every_parameter():
    result = gradcheck.check_network(seeded_rng(3, 0), n=5)
    assert result.passed, result


def test_zero_gradient_only_advances_step():
    params = init_params(DIMS, seeded_rng(0, 0))
    before = params.copy()
    opt = OptimizerState(base_lr=1e-2)
    adam_step(params, opt, {k: np.zeros_like(v) for k, v in params.tensors.items()})
    assert opt.step == 1
    for name in PARAM_NAMES:
        np.testing.assert_array_equal(params[name], before[name])


def test_adam_descends_on_square():
    params = ModelParams((1, 1, 1, 1), {"w": np.array([1.0])})
    opt = OptimizerState(base_lr=1e-2)
    adam_step(params, opt, {"w": 2 * params["w"]})
    assert params["w"][0] < 1.0


def test_zero_learning_rate_is_bit_identical(rng):
    params = init_params(DIMS, rng)
    before = params.copy()
    opt = OptimizerState(base_lr=0.0)
    for _ in range(5):
        _, p, cache = forward(params, rng.normal(size=(6, 4)))
        backward_and_step(params, opt, cache, grad_logits=p - np.eye(5)[rng.integers(5, size=6)])
    for name in PARAM_NAMES:
        np.testing.assert_array_equal(params[name], before[name])


def test_feature_only_gradient_leaves_head_alone(rng):
    params = init_params(DIMS, rng)
    head = params["head.w"].copy()
    opt = OptimizerState(base_lr=1e-2)
    z, _, cache = forward(params, rng.normal(size=(3, 4)))
    backward_and_step(params, opt, cache, grad_features=z)
    np.testing.assert_array_equal(params["head.w"], head)
    assert "head.w" not in opt.m


def test_non_finite_gradient_names_parameter():
    params = init_params(DIMS, seeded_rng(0, 0))
    grads = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    grads["enc.b2"][0] = np.nan
    with pytest.raises(NumericError) as err:
        adam_step(params, OptimizerState(), grads)
    assert err.value.term == "enc.b2"


def test_epoch_lr():
    assert epoch_lr(0.0001, 0) == 0.0001
    assert epoch_lr(0.0001, 1) == pytest.approx(0.000095, rel=1e-12)
    assert epoch_lr(0.37, 0) == 0.37
    with pytest.raises(InvalidArgument):
        epoch_lr(0.1, -1)


def test_checkpoint_round_trip_is_bit_exact(tmp_path, rng):
    params = init_params(DIMS, rng)
    opt = OptimizerState(base_lr=3e-4)
    _, p, cache = forward(params, rng.normal(size=(4, 4)))
    backward_and_step(params, opt, cache, grad_logits=p)
    path = tmp_path / "ckpt" / "model.json"
    save_checkpoint(path, params, opt, meta={"n_views": 3})
    loaded, lopt, meta = load_checkpoint(path)
    assert loaded.dims == params.dims
    for name in PARAM_NAMES:
        np.testing.assert_array_equal(loaded[name], params[name])
        np.testing.assert_array_equal(lopt.m[name], opt.m[name])
    assert (lopt.step, lopt.base_lr) == (opt.step, opt.base_lr)
    assert meta == {"n_views": 3}


def test_checkpoint_rejects_foreign_json(tmp_path):
    path = tmp_path / "x.json"
    path.write_text('{"format": "something-else"}')
    with pytest.raises(InvalidArgument):
        load_checkpoint(path)
