import math

import numpy as np
import pytest

from pacmargin.data import ParseError
from pacmargin.models import (
    LinearModel,
    PartialShelModel,
    ReluModel,
    ShelModel,
    StateError,
    from_bytes,
    init_partial_shel,
    init_shel,
    load_model,
    partial_shel_backward,
    partial_shel_forward,
    relu_forward,
    sample_shel_proxy,
    save_model,
    shel_backward,
    shel_forward,
    to_bytes,
)
from pacmargin.numcore import DomainError, erf


def _fd_check(loss_fn, param, grad, rng, n_coords=12, h=1e-6):
    """Central differences on a random subset of coordinates."""
    flat = param.reshape(-1)
    idx = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        fd = (up - down) / (2 * h)
        assert grad.reshape(-1)[i] == pytest.approx(fd, rel=1e-4, abs=1e-8)


class TestShelForward:
    def test_erf_unit(self):
        model = ShelModel(np.array([[1.0, 0.0]]), np.array([[1.0]]), np.zeros((1, 2)))
        assert shel_forward(model, np.array([2.0, 0.0]))[0] == pytest.approx(erf(1 / math.sqrt(2)))
        assert shel_forward(model, np.array([2.0, 0.0]))[0] == pytest.approx(0.6826894921370859)

    def test_zero_u(self):
        rng = np.random.default_rng(0)
        model = ShelModel(np.zeros((4, 3)), rng.standard_normal((2, 4)), np.zeros((4, 3)))
        np.testing.assert_array_equal(shel_forward(model, rng.standard_normal((5, 3))), 0.0)

    def test_scale_invariant_input(self):
        model = init_shel(3, 6, 2, np.random.default_rng(1))
        x = np.array([0.3, -1.0, 2.0])
        np.testing.assert_allclose(shel_forward(model, x), shel_forward(model, 7.0 * x), rtol=1e-13)

    def test_zero_input(self):
        model = init_shel(3, 2, 2, np.random.default_rng(1))
        with pytest.raises(DomainError):
            shel_forward(model, np.zeros(3))

    def test_binary_shape(self):
        model = init_shel(3, 5, 1, np.random.default_rng(2))
        assert model.binary
        assert shel_forward(model, np.ones((4, 3))).shape == (4,)


class TestShelBackward:
    @pytest.mark.parametrize("classes", [1, 3])
    def test_finite_differences(self, classes):
        rng = np.random.default_rng(10 + classes)
        model = init_shel(4, 6, classes, rng)
        model.U0 = model.U0 + 0.1
        x = rng.standard_normal((9, 4))
        y = rng.choice([-1, 1], 9) if classes == 1 else rng.integers(0, classes, 9)
        _, g_u, g_v = shel_backward(model, x, y)
        _fd_check(lambda: shel_backward(model, x, y)[0], model.U, g_u, rng)
        _fd_check(lambda: shel_backward(model, x, y)[0], model.V, g_v, rng)

    def test_inactive_unit_has_no_v_gradient(self):
        model = ShelModel(np.array([[0.0, 0.0], [1.0, 0.0]]), np.ones((2, 2)), np.zeros((2, 2)))
        _, _, g_v = shel_backward(model, np.array([[1.0, 1.0]]), np.array([0]))
        np.testing.assert_array_equal(g_v[:, 0], 0.0)


class TestPartialShel:
    def _model(self, seed):
        rng = np.random.default_rng(seed)
        model = init_partial_shel(5, (7, 6, 4), 8, 3, rng)
        for w in model.layers:
            w += 0.05 * rng.standard_normal(w.shape)
        return model, rng

    def test_finite_differences(self):
        model, rng = self._model(3)
        x = rng.standard_normal((10, 5))
        y = rng.integers(0, 3, 10)
        _, g_w, g_u, g_v = partial_shel_backward(model, x, y)

        def loss():
            return partial_shel_backward(model, x, y)[0]

        for w, g in zip(model.layers, g_w):
            _fd_check(loss, w, g, rng)
        _fd_check(loss, model.head.U, g_u, rng)
        _fd_check(loss, model.head.V, g_v, rng)

    def test_noise_needs_sigma(self):
        model, rng = self._model(4)
        noise = [rng.standard_normal(w.shape) for w in model.layers]
        with pytest.raises(StateError):
            partial_shel_forward(model, np.ones(5), noise)

    def test_zero_sigma_is_deterministic(self):
        model, rng = self._model(5)
        model.sigma = 0.0
        x = rng.standard_normal((4, 5))
        noise = [rng.standard_normal(w.shape) for w in model.layers]
        np.testing.assert_array_equal(partial_shel_forward(model, x, noise), partial_shel_forward(model, x))

    def test_dead_features_are_finite(self):
        model, _ = self._model(6)
        for w in model.layers:
            w[:] = -np.abs(w)
        out = partial_shel_forward(model, np.abs(np.ones((2, 5))))
        assert np.all(np.isfinite(out))

    def test_drift(self):
        model, _ = self._model(7)
        expected = sum(float(np.sum((w - w0) ** 2)) for w, w0 in zip(model.layers, model.priors))
        assert model.drift_sq() == pytest.approx(expected, rel=1e-13)


class TestRelu:
    def test_forward(self):
        model = ReluModel([np.array([[1.0, -1.0], [0.5, 0.5]]), np.array([[1.0, 2.0]])], None, 2.0)
        # hidden relu([1, 1]) = [1, 1]; output 1 + 2
        assert relu_forward(model, np.array([1.5, 0.5]))[0] == pytest.approx(3.0)

    def test_radius_check(self):
        model = ReluModel([np.eye(2)], None, 1.0)
        with pytest.raises(DomainError):
            relu_forward(model, np.array([1.0, 1.0]))

    def test_shape_chain(self):
        with pytest.raises(DomainError):
            ReluModel([np.eye(2), np.ones((1, 3))], None, 1.0)

    def test_max_units(self):
        assert ReluModel([np.ones((8, 3)), np.ones((2, 8))], None, 1.0).max_units == 8


class TestProxy:
    def test_signs_follow_v(self):
        rng = np.random.default_rng(0)
        model = init_shel(3, 4, 2, rng)
        f = sample_shel_proxy(model, 50, np.random.default_rng(1))
        assert f.weights.shape == (50, 3)
        assert f.signs.shape == (50, 2)
        assert set(np.unique(f.signs)) <= {-1.0, 1.0}
        out = f(rng.standard_normal((6, 3)))
        assert out.shape == (6, 2)
        assert np.all(np.abs(out) <= 1.0)

    def test_mean_matches_scaled_network(self):
        rng = np.random.default_rng(2)
        model = init_shel(3, 3, 2, rng)
        x = rng.standard_normal(3)
        draws = np.array([sample_shel_proxy(model, 1, np.random.default_rng(s))(x) for s in range(20000)])
        target = shel_forward(model, x) / (model.v_inf * model.width)
        se = draws.std(axis=0) / math.sqrt(len(draws))
        assert np.all(np.abs(draws.mean(axis=0) - target) <= 4 * se)


class TestContainer:
    def _models(self):
        rng = np.random.default_rng(0)
        partial = init_partial_shel(3, (4, 4, 2), 5, 3, rng)
        partial.sigma = 0.25
        return [
            LinearModel(np.array([0.6, -0.8])),
            LinearModel(np.array([0.5, 0.25]), "L1"),
            init_shel(3, 4, 2, rng),
            init_shel(3, 4, 1, rng),
            partial,
            init_partial_shel(3, (2, 2, 2), 2, 2, rng),
            ReluModel([rng.standard_normal((4, 3)), rng.standard_normal((2, 4))], None, 1.5),
        ]

    def test_round_trip_bytes(self):
        for model in self._models():
            blob = to_bytes(model)
            assert to_bytes(from_bytes(blob)) == blob

    def test_round_trip_values(self, tmp_path):
        for i, model in enumerate(self._models()):
            path = tmp_path / f"m{i}.pacm"
            save_model(path, model)
            back = load_model(path)
            assert type(back) is type(model)
            if isinstance(model, PartialShelModel):
                assert back.sigma == model.sigma
                np.testing.assert_array_equal(back.head.U, model.head.U)

    def test_bad_magic(self):
        with pytest.raises(ParseError) as err:
            from_bytes(b"NOPE" + bytes(12))
        assert err.value.offset == 0

    def test_truncated(self):
        blob = to_bytes(LinearModel(np.array([0.6, -0.8])))
        with pytest.raises(ParseError) as err:
            from_bytes(blob[:-3])
        assert err.value.offset > 16

    def test_empty(self):
        with pytest.raises(ParseError) as err:
            from_bytes(b"")
        assert err.value.offset == 0
