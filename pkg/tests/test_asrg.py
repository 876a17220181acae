import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdmtl import numerics as nx
from sdmtl.asrg import (
    AsrgConfig, asrg_forward, dynamic_selector, f_d, gamma_at, gated_queries, inducing_attention,
    init_asrg, multihead_attention, selection_rate_stats,
)


def tensor(x):
    return nx.Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


class TestSmoothStep:
    @pytest.mark.parametrize("gamma", [1e-3, 0.5, 1.0, 10.0])
    def test_boundaries(self, gamma):
        assert f_d(-gamma / 2, gamma) == 0.0
        assert f_d(gamma / 2, gamma) == 1.0
        assert f_d(0.0, gamma) == 0.5

    def test_hand_value(self):
        assert f_d(0.25, 1.0) == 0.84375

    def test_bad_gamma(self):
        for g in (0.0, -1.0):
            with pytest.raises(ValueError):
                f_d(0.0, g)
        with pytest.raises(ValueError):
            nx.smooth_step(tensor([0.0]), 0.0)

    @pytest.mark.parametrize("gamma", [1e-3, 0.5, 1.0, 10.0])
    def test_monotone_range_and_peak_slope(self, gamma):
        z = np.linspace(-gamma, gamma, 10_001)
        v = f_d(z, gamma)
        assert np.all(np.diff(v) >= 0)
        assert v.min() == 0.0 and v.max() == 1.0
        t = tensor(z)
        nx.backward(nx.sum(nx.smooth_step(t, gamma)))
        assert np.max(np.abs(t.grad)) == pytest.approx(1.5 / gamma, rel=1e-12)
        assert t.grad[5000] == pytest.approx(1.5 / gamma, rel=1e-12)

    @pytest.mark.parametrize("gamma", [1e-3, 0.5, 1.0, 10.0])
    def test_c1_junctions(self, gamma):
        u = 1e-7  # step in z / gamma units
        for z0 in (-gamma / 2, gamma / 2):
            left = (f_d(z0, gamma) - f_d(z0 - u * gamma, gamma)) / u
            right = (f_d(z0 + u * gamma, gamma) - f_d(z0, gamma)) / u
            assert abs(left) <= 1e-6 and abs(right) <= 1e-6
        t = tensor([-gamma / 2, gamma / 2])
        nx.backward(nx.sum(nx.smooth_step(t, gamma)))
        np.testing.assert_array_equal(t.grad, [0.0, 0.0])

    def test_tensor_matches_array(self, rng):
        z = rng.normal(size=50) * 3
        np.testing.assert_array_equal(nx.smooth_step(nx.Tensor(z), 2.0).value, f_d(z, 2.0))

    def test_saturated_grad_exact_zero(self):
        t = tensor([-5.0, 5.0])
        nx.backward(nx.sum(nx.smooth_step(t, 1.0)))
        np.testing.assert_array_equal(t.grad, [0.0, 0.0])


class TestGamma:
    def test_examples(self):
        assert gamma_at(0) == 10.0
        assert gamma_at(45_000) == pytest.approx(1.0, abs=1e-12)
        assert gamma_at(1_000_000) == 1e-3

    def test_nonincreasing_with_floor(self):
        g = np.array([gamma_at(s) for s in range(0, 2_000_001, 997)])
        assert np.all(np.diff(g) <= 0) and g.min() >= 1e-3

    def test_negative_step(self):
        with pytest.raises(ValueError):
            gamma_at(-1)


def small(rng, F=6, d=8, K=4, heads=2, B=3):
    cfg = AsrgConfig(F, d, K, heads)
    params = init_asrg(cfg, rng)
    H = tensor(rng.normal(size=(B, F, d)))
    return cfg, params, H


class TestSelector:
    def test_zero_weights_give_half(self, rng):
        cfg, params, H = small(rng)
        params["asrg.sel.w0"].value[:] = 0
        for step in (0, 45_000, 10**6):
            np.testing.assert_array_equal(dynamic_selector(H, params, step).value, 0.5)

    def test_large_logits_give_ones(self, rng):
        cfg, params, H = small(rng)
        params["asrg.sel.w0"].value[:] = 0
        params["asrg.sel.b0"].value[:] = 6.0
        np.testing.assert_array_equal(dynamic_selector(H, params, 0).value, 1.0)

    def test_samplewise(self, rng):
        cfg, params, H = small(rng)
        z = dynamic_selector(H, params, 45_000).value
        assert z.shape == (3, 4)
        assert np.all((z >= 0) & (z <= 1))
        assert not np.array_equal(z[0], z[1])

    def test_shape_error(self, rng):
        cfg, params, H = small(rng)
        with pytest.raises(ValueError):
            dynamic_selector(tensor(np.zeros((2, 5, 8))), params, 0)


class TestInducingAttention:
    def test_shapes(self, rng):
        cfg, params, H = small(rng)
        out = asrg_forward(H, params, cfg, 0)
        assert out["y"].shape == (3, 4, 8)
        assert out["weights"].shape == (3, 2, 4, 6)  # B x m x K x F
        np.testing.assert_allclose(out["weights"].value.sum(axis=-1), 1.0, atol=1e-12)

    def test_identity_mask(self, rng):
        I = tensor(rng.normal(size=(4, 8)))
        q = gated_queries(nx.Tensor(np.ones((2, 4))), I)
        np.testing.assert_array_equal(q.value[0], I.value)
        np.testing.assert_array_equal(q.value[1], I.value)

    def test_zero_mask_uniform_weights(self, rng):
        cfg, params, H = small(rng)
        q = gated_queries(nx.Tensor(np.zeros((3, 4))), params["asrg.inducing"])
        eye = nx.Tensor(np.eye(8))
        o, w = multihead_attention(q, H, params["asrg.wk"], params["asrg.wv"], eye, 2)
        np.testing.assert_allclose(w.value, 1.0 / 6.0, atol=1e-15)
        v_mean = (H.value @ params["asrg.wv"].value).mean(axis=1)  # B x d
        np.testing.assert_allclose(o.value, np.repeat(v_mean[:, None, :], 4, axis=1), atol=1e-13)

    def test_field_permutation_invariance(self, rng):
        cfg, params, H = small(rng)
        z = nx.Tensor(rng.uniform(size=(3, 4)))
        perm = rng.permutation(6)
        a = inducing_attention(H, z, params, 2).value
        b = inducing_attention(nx.Tensor(H.value[:, perm]), z, params, 2).value
        np.testing.assert_allclose(a, b, atol=1e-13)

    def test_shape_mismatch(self, rng):
        cfg, params, H = small(rng)
        with pytest.raises(ValueError):
            inducing_attention(H, nx.Tensor(np.ones((2, 4))), params, 2)
        with pytest.raises(ValueError):
            gated_queries(nx.Tensor(np.ones((3, 5))), params["asrg.inducing"])

    def test_heads_must_divide(self):
        with pytest.raises(ValueError):
            AsrgConfig(6, 8, 4, 3)

    def test_gradient_check(self, rng):
        cfg, params, H = small(rng, B=2)
        w = nx.Tensor(rng.normal(size=(2, 4, 8)))
        plist = list(params.values()) + [H]
        err = nx.finite_diff_check(lambda: nx.sum(nx.mul(asrg_forward(H, params, cfg, 44_000)["y"], w)), plist)
        assert err <= 1e-4

    def test_flops_linear_in_fields(self, rng):
        Fs = np.array([8, 16, 32, 64])
        flops = []
        for F in Fs:
            cfg, params, H = small(rng, F=int(F), d=18, K=64, B=4)
            with nx.no_grad(), nx.count_flops() as c:
                asrg_forward(H, params, cfg, 0)
            flops.append(c.count)
        slope, icpt = np.polyfit(Fs, flops, 1)
        pred = slope * Fs + icpt
        r2 = 1 - np.sum((flops - pred) ** 2) / np.sum((flops - np.mean(flops)) ** 2)
        assert r2 >= 0.99


class TestSelectionStats:
    def test_all_ones(self):
        s = selection_rate_stats(np.ones((5, 64)))
        np.testing.assert_array_equal(s.rates, 1.0)

    def test_half(self):
        z = np.zeros((1, 64))
        z[0, :32] = 1
        assert selection_rate_stats(z).rates[0] == 0.5

    @given(st.integers(1, 40), st.integers(1, 16), st.integers(0, 2**31))
    @settings(max_examples=30)
    def test_histogram_conserves(self, B, K, seed):
        z = np.random.default_rng(seed).uniform(size=(B, K))
        s = selection_rate_stats(z)
        assert s.counts.sum() == B and len(s.counts) == 20
        assert np.all((s.rates >= 0) & (s.rates <= 1))

    def test_empty(self):
        with pytest.raises(ValueError):
            selection_rate_stats(np.zeros((0, 4)))

    def test_csv(self, tmp_path):
        s = selection_rate_stats(np.array([[1.0, 0.0], [1.0, 1.0]]))
        s.write_csv(tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "sample_index,rate"
        assert lines[1:3] == ["0,0.5", "1,1.0"]
        assert lines[-1] == "# mean=0.750000 median=0.750000"
