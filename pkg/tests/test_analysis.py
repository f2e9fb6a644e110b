import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from copi.analysis import (CompressedNetwork, compress, decorrelated_inputs, feature_maps, fit_readout, read_pgm,
                           tile_grid, to_signed_gray, write_pgm)
from copi.data import Dataset, one_hot
from copi.errors import ContractError
from copi.network import IDENTITY, build_network, forward
from copi.tensor import make_rng


def orthogonal_rows(rng, k, n):
    """``k`` mutually orthogonal rows of length ``n`` with varied norms."""
    q, _ = np.linalg.qr(rng.standard_normal((n, k)))
    return (q * rng.uniform(0.5, 3.0, k)).T


def whitening(y):
    c = y @ y.T / y.shape[1]
    vals, vecs = np.linalg.eigh(c)
    return vecs @ np.diag(vals ** -0.5) @ vecs.T


class TestFitReadout:
    @given(st.integers(0, 10_000))
    def test_orthogonal_rows_match_least_squares(self, seed):
        rng = make_rng(seed)
        X = orthogonal_rows(rng, 6, 40)
        Y = rng.standard_normal((3, 40))
        ols = np.linalg.lstsq(X.T, Y.T, rcond=None)[0].T
        np.testing.assert_allclose(fit_readout(X, Y).B, ols, atol=1e-10)

    def test_hand_diagonal(self):
        X = np.array([[2.0, 0.0], [0.0, 1.0]])
        Y = np.array([[4.0, 3.0]])
        np.testing.assert_allclose(fit_readout(X, Y).B, [[2.0, 3.0]])

    def test_dead_rows_get_zero_columns(self):
        X = np.array([[1.0, 2.0], [0.0, 0.0]])
        with pytest.warns(UserWarning, match="no activity"):
            r = fit_readout(X, np.array([[1.0, 2.0]]))
        assert r.B[0, 1] == 0.0
        assert np.isfinite(r.B).all()

    def test_warns_when_correlated(self):
        X = np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.1]])
        with pytest.warns(UserWarning, match="decorrelated"):
            fit_readout(X, X)

    def test_no_warning_when_decorrelated(self):
        X = orthogonal_rows(make_rng(0), 3, 10)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            fit_readout(X, X)


def linear_toy(seed=0, n=500):
    """Linear 3-layer net whose every R whitens its input exactly on the data."""
    rng = make_rng(seed)
    net = build_network(rng, [6, 5, 4, 3], hidden_activation=IDENTITY)
    y0 = rng.standard_normal((6, 6)) @ rng.standard_normal((6, n))
    y = y0
    for layer in net.layers:
        layer.R = whitening(y)
        y = layer.W @ (layer.R @ y)
    return net, Dataset(y0, one_hot(rng.integers(0, 3, n), 3))


class TestCompress:
    @pytest.mark.parametrize("keep", [0, 1, 2])
    def test_linear_toy_is_exact(self, keep):
        net, ds = linear_toy()
        cn = compress(net, ds, keep)
        full = forward(net, ds.features)[-1].y
        np.testing.assert_allclose(cn.predict(ds.features), full, atol=1e-9)
        assert cn.keep_layers == keep

    def test_keep_all_is_original(self):
        net, ds = linear_toy()
        cn = compress(net, ds, 3)
        assert cn.readout is None
        np.testing.assert_array_equal(cn.predict(ds.features), forward(net, ds.features)[-1].y)

    def test_out_of_range(self):
        net, ds = linear_toy()
        with pytest.raises(ContractError):
            compress(net, ds, 4)

    def test_blocked_fit_equals_single_block(self):
        net, ds = linear_toy(2)
        a = compress(net, ds, 1, block=37)
        b = compress(net, ds, 1, block=10_000)
        np.testing.assert_allclose(a.readout.B, b.readout.B, rtol=1e-10)

    def test_accuracy(self):
        net, ds = linear_toy()
        cn = compress(net, ds, 0)
        y = forward(net, ds.features)[-1].y
        assert cn.accuracy(ds) == pytest.approx(np.mean(np.argmax(y, 0) == ds.class_labels()))


class TestFeatureMaps:
    def test_linear_first_layer_recovers_W(self):
        net, ds = linear_toy(3)
        maps = feature_maps(net, ds, [1, 2])
        np.testing.assert_allclose(maps[1], net.layers[0].W, atol=1e-9)
        assert maps[2].shape == (4, 6)

    def test_bad_layer(self):
        net, ds = linear_toy()
        with pytest.raises(ContractError):
            feature_maps(net, ds, [0])

    def test_decorrelated_inputs(self):
        net, ds = linear_toy()
        x = decorrelated_inputs(net, ds.features)
        np.testing.assert_allclose(x @ x.T / ds.n, np.eye(6), atol=1e-9)


class TestPgm:
    def test_signed_gray(self):
        np.testing.assert_array_equal(to_signed_gray(np.array([-2.0, 0.0, 2.0, 1.0])), [1, 128, 255, 192])

    def test_all_zero(self):
        assert np.all(to_signed_gray(np.zeros(4)) == 128)

    def test_grid_layout(self):
        g = tile_grid(np.ones((3, 4)), n_cols=2)
        assert g.shape == (2 * 3 + 1, 2 * 3 + 1)
        assert g[1, 1] == 255 and g[0, 0] == 128
        assert np.all(g[4:6, 4:6] == 128)  # empty fourth tile

    def test_colour_layout(self):
        g = tile_grid(np.ones((1, 12)))
        assert g.shape == (4, 8)

    def test_round_trip(self, tmp_path):
        img = make_rng(0).integers(0, 256, (5, 7)).astype(np.uint8)
        write_pgm(tmp_path / "a.pgm", img)
        assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n7 5\n255\n")
        np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), img)

    def test_non_image_dim(self):
        with pytest.raises(ContractError):
            tile_grid(np.ones((1, 7)))
