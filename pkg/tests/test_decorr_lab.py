import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from copi.decorr_lab import (LabConfig, lab_data, lab_loss, rule_anti_hebbian, rule_copi, rule_grad_on_R,
                             run_lab, scale_ratio)
from copi.errors import ConfigError
from copi.rules import copi_decorr_update
from copi.tensor import make_rng


def numeric_grad_R(R, y):
    h = 1e-6
    g = np.zeros_like(R)
    for idx in np.ndindex(R.shape):
        Rp, Rm = R.copy(), R.copy()
        Rp[idx] += h
        Rm[idx] -= h
        g[idx] = (lab_loss(Rp @ y) - lab_loss(Rm @ y)) / (2 * h)
    return g


class TestLoss:
    def test_hand(self):
        # one sample x = (1, 2): off-diagonal entries 2 and 2 -> 8
        assert lab_loss(np.array([[1.0], [2.0]])) == pytest.approx(8.0)

    def test_diagonal_data_zero(self):
        assert lab_loss(np.diag([1.0, 2.0, 3.0])) == 0.0


class TestRules:
    def test_copi_is_decorr_update(self):
        rng = make_rng(0)
        R, x = rng.standard_normal((4, 4)), rng.standard_normal((4, 10))
        np.testing.assert_array_equal(rule_copi(R, x), copi_decorr_update(R, x))

    def test_grad_on_R_is_descent_direction(self):
        rng = make_rng(1)
        y = rng.standard_normal((4, 6))
        R = np.eye(4) + 0.1 * rng.standard_normal((4, 4))
        np.testing.assert_allclose(rule_grad_on_R(R, R @ y, y), -numeric_grad_R(R, y) / 4, rtol=1e-6, atol=1e-8)

    def test_anti_hebbian(self):
        x = np.array([[1.0, 1.0], [1.0, -1.0]])
        np.testing.assert_allclose(rule_anti_hebbian(np.eye(2), x), np.zeros((2, 2)), atol=1e-15)

    @given(st.integers(0, 1000), st.floats(0.05, 20.0))
    def test_copi_is_scale_equivariant(self, seed, c):
        rng = make_rng(seed)
        R = np.eye(5) + 0.1 * rng.standard_normal((5, 5))
        y = rng.standard_normal((5, 20))
        base = R + 1e-3 * rule_copi(R, R @ y)
        scaled = c * R + 1e-3 * rule_copi(c * R, (c * R) @ (y / c))
        np.testing.assert_allclose(scaled @ (y / c), base @ y, rtol=1e-9, atol=1e-12)


class TestLab:
    def test_copi_identical_across_scales(self):
        res = run_lab(LabConfig(dim=20, n_samples=200))
        r = res.reductions("copi")
        assert np.all(r > 0)
        assert (r.max() - r.min()) / r.max() < 1e-6

    def test_other_rules_vary(self):
        res = run_lab(LabConfig(dim=20, n_samples=200))
        assert scale_ratio(res.reductions("anti-hebbian")) > 1.5
        assert scale_ratio(res.reductions("grad-on-R")) > 1.5

    def test_init_noise(self):
        _, R = lab_data(LabConfig(dim=10, r_init_noise=0.1))
        assert np.abs(R - np.eye(10)).max() <= 0.1

    def test_csv(self, tmp_path):
        res = run_lab(LabConfig(dim=5, n_samples=20, scales=[1.0, 2.0]))
        res.write_csv(tmp_path / "l.csv", "dim = 5")
        lines = (tmp_path / "l.csv").read_text().splitlines()
        assert lines[0] == "# dim = 5"
        assert lines[1] == "rule,c,loss_before,loss_after,reduction"
        assert len(lines) == 2 + 3 * 2

    def test_scale_ratio(self):
        assert scale_ratio(np.array([1.0, 2.0, 4.0])) == 4.0
        assert scale_ratio(np.array([1.0, -1.0])) == float("inf")

    def test_bad_scales(self):
        with pytest.raises(ConfigError):
            LabConfig(scales=[0.0])
