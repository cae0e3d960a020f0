import numpy as np
import pytest
from scipy.special import expit

from gru_snf._training import train
from gru_snf.config import TrainConfig
from gru_snf.errors import ContractError, ShapeError
from gru_snf.model import init_model
from gru_snf.recurrent import (
    GruParams,
    encode_window,
    gru_cell,
    init_gru_params,
    readout,
    zero_state,
)


def _zero_params(d=2, hidden=3):
    params = init_gru_params(d, hidden, np.random.default_rng(0))
    return GruParams(**{k: np.zeros_like(v) for k, v in params.as_dict().items()})


def test_init_shapes():
    params = init_gru_params(4, 5, np.random.default_rng(1))
    assert params.input_dim == 4
    assert params.hidden_size == 5
    assert params.u_h.shape == (5, 5)
    assert params.w_o.shape == (5, 4)
    assert zero_state(params, rows=3).shape == (3, 5)


def test_zero_weights_halve_the_state():
    params = _zero_params()
    h = np.array([[1.0, -2.0, 4.0]])
    # both gates sit at 0.5 and the candidate state is tanh(0) = 0
    np.testing.assert_allclose(gru_cell(np.ones((1, 2)), h, params), 0.5 * h)


def test_wrong_shapes_raise():
    params = init_gru_params(2, 3, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        gru_cell(np.ones((1, 3)), zero_state(params), params)
    with pytest.raises(ShapeError):
        gru_cell(np.ones((2, 2)), zero_state(params), params)
    with pytest.raises(ShapeError):
        GruParams(**{**params.as_dict(), "b_o": np.zeros((1, 5))})


def test_encode_window_batches_rows_independently():
    rng = np.random.default_rng(3)
    params = init_gru_params(2, 4, rng)
    windows = rng.normal(size=(3, 5, 2))
    batched = encode_window(windows, params)
    for i in range(3):
        single = encode_window(windows[i], params)
        np.testing.assert_allclose(batched[i : i + 1], single)


def test_encode_window_matches_manual_fold():
    rng = np.random.default_rng(4)
    params = init_gru_params(2, 3, rng)
    window = rng.normal(size=(4, 2))
    h = zero_state(params)
    for frame in window:
        h = gru_cell(frame[np.newaxis], h, params)
    np.testing.assert_array_equal(encode_window(window, params), h)


def test_encode_empty_window():
    params = init_gru_params(2, 3, np.random.default_rng(0))
    with pytest.raises(ContractError):
        encode_window(np.zeros((0, 2)), params)


def test_readout_is_affine():
    params = init_gru_params(2, 3, np.random.default_rng(5))
    h = np.array([[0.1, 0.2, 0.3]])
    np.testing.assert_allclose(readout(h, params), h @ params.w_o + params.b_o)


def test_update_is_a_convex_combination():
    rng = np.random.default_rng(6)
    params = init_gru_params(3, 4, rng)
    y = rng.normal(scale=2.0, size=(50, 3))
    h = rng.uniform(-3.0, 3.0, size=(50, 4))
    r = expit(y @ params.w_r + h @ params.u_r + params.b_r)
    h_hat = np.tanh(y @ params.w_h + (r * h) @ params.u_h + params.b_h)
    h_next = gru_cell(y, h, params)
    assert np.all(h_next >= np.minimum(h, h_hat) - 1e-12)
    assert np.all(h_next <= np.maximum(h, h_hat) + 1e-12)
    bound = np.maximum(np.max(np.abs(h), axis=1, keepdims=True), 1.0)
    assert np.all(np.abs(h_next) <= bound + 1e-12)


def test_zero_weights_decay_the_initial_state():
    params = _zero_params()
    h0 = np.array([[0.8, -0.4, 2.0]])
    h = encode_window(np.ones((3, 2)), params, h0=h0)
    np.testing.assert_allclose(h, 0.5**3 * h0)
    np.testing.assert_array_equal(
        gru_cell(np.ones((1, 2)), zero_state(params), params), np.zeros((1, 3))
    )


def test_encoding_is_deterministic_and_order_sensitive():
    rng = np.random.default_rng(7)
    params = init_gru_params(2, 4, rng)
    window = rng.normal(size=(5, 2))
    first = encode_window(window, params)
    np.testing.assert_array_equal(first, encode_window(window.copy(), params))
    assert not np.allclose(first, encode_window(window[::-1], params))


def test_readout_examples():
    params = init_gru_params(3, 3, np.random.default_rng(8))
    h = np.array([[0.5, -1.0, 2.0]])
    constant = GruParams(
        **{
            **params.as_dict(),
            "w_o": np.zeros((3, 3)),
            "b_o": np.array([[1.0, 2.0, 3.0]]),
        }
    )
    np.testing.assert_array_equal(readout(h, constant), [[1.0, 2.0, 3.0]])
    identity = GruParams(
        **{**params.as_dict(), "w_o": np.eye(3), "b_o": np.zeros((1, 3))}
    )
    np.testing.assert_array_equal(readout(h, identity), h)


def test_readout_is_linear_without_bias():
    rng = np.random.default_rng(9)
    params = init_gru_params(2, 5, rng)
    params = GruParams(**{**params.as_dict(), "b_o": np.zeros((1, 2))})
    h1, h2 = rng.normal(size=(1, 5)), rng.normal(size=(1, 5))
    alpha, beta = 0.7, -1.3
    np.testing.assert_allclose(
        readout(alpha * h1 + beta * h2, params),
        alpha * readout(h1, params) + beta * readout(h2, params),
        rtol=0.0,
        atol=1e-12,
    )


@pytest.mark.slow
def test_trained_readout_extrapolates_constant_velocity():
    rng = np.random.default_rng(10)
    velocity = np.array([0.05, -0.03])

    def sequences(count, length=6):
        starts = rng.uniform(-0.5, 0.5, size=(count, 1, 2))
        return list(starts + np.arange(length)[:, np.newaxis] * velocity)

    model = init_model(2, hidden_size=16, flow_layers=2, conditioner_width=8, seed=2)
    cfg = TrainConfig(
        epochs=150, batch_size=32, learning_rate=1e-2, readout_weight=5.0, seed=2
    )
    trained, _ = train(model, sequences(200), cfg)
    held_out = np.stack(sequences(20))
    h = encode_window(held_out[:, :-1], trained.gru)
    errors = np.linalg.norm(readout(h, trained.gru) - held_out[:, -1], axis=1)
    assert errors.mean() < 0.1
