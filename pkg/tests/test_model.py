import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from sbnet.errors import BatchTooSmallError, DegenerateVectorError, ContractError, DimensionError
from sbnet.model import (
    SingleBranchParams,
    embed,
    init_single,
    init_two,
    single_backward,
    single_forward,
    two_backward,
    two_forward,
)
from sbnet.numerics import Rng, finite_diff_grad, gaussian, relative_error


def identity_net(d):
    return SingleBranchParams(np.eye(d), np.zeros(d), np.eye(d), np.zeros(d), np.ones(d), np.zeros(d),
                              np.zeros(d), np.ones(d))


class TestSingleForward:
    def test_eval_is_repeatable_and_read_only(self, rng):
        p = init_single(6, 8, 4, rng)
        x = gaussian(rng, 5, 6)
        before = {k: v.copy() for k, v in p.arrays().items()}
        a, _ = single_forward(p, x, "eval")
        b, _ = single_forward(p, x, "eval")
        np.testing.assert_array_equal(a, b)
        for k, v in p.arrays().items():
            np.testing.assert_array_equal(v, before[k])

    def test_train_output_is_standardized(self, rng):
        p = init_single(6, 8, 4, rng)
        p.bn_beta = np.array([0.5, -1.0, 2.0, 0.0])
        out, cache = single_forward(p, gaussian(rng, 32, 6), "train")
        xhat = cache.values["xhat"]
        assert np.all(np.abs(xhat.mean(axis=0)) < 1e-6)
        np.testing.assert_allclose(xhat.var(axis=0), 1.0, atol=1e-4)  # bn_eps shrinks it slightly
        np.testing.assert_allclose(out.mean(axis=0), p.bn_beta, atol=1e-12)

    def test_identity_weights_against_hand_oracle(self):
        p = identity_net(3)
        x = np.array([[1.0, -2.0, 0.5], [2.0, -1.0, 1.5], [0.5, -3.0, -0.5]])
        out, _ = single_forward(p, x, "train")
        a = np.maximum(x, 0)
        want = (a - a.mean(0)) / np.sqrt(a.var(0) + 1e-5)
        np.testing.assert_allclose(out, want, atol=1e-12)
        np.testing.assert_array_equal(out[:, 1], 0.0)  # all-negative column vanishes

    def test_running_stats_update(self, rng):
        p = init_single(4, 5, 3, rng)
        x = gaussian(rng, 10, 4)
        single_forward(p, x, "train")
        assert np.all(p.bn_running_var >= 0)
        assert not np.allclose(p.bn_running_mean, 0.0)

    def test_train_needs_two_rows(self, rng):
        with pytest.raises(BatchTooSmallError):
            single_forward(init_single(4, 5, 3, rng), np.ones((1, 4)), "train")

    def test_eval_accepts_one_row(self, rng):
        out, _ = single_forward(init_single(4, 5, 3, rng), np.ones((1, 4)), "eval")
        assert out.shape == (1, 3)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(DimensionError):
            single_forward(init_single(4, 5, 3, rng), np.ones((3, 5)), "train")

    def test_modality_blind(self, rng):
        p = init_single(4, 5, 3, rng)
        x = gaussian(rng, 6, 4)
        np.testing.assert_array_equal(embed(p, x, "face"), embed(p, x, "voice"))


class TestSingleBackward:
    def test_zero_upstream_gives_zero(self, rng):
        p = init_single(4, 5, 3, rng)
        _, cache = single_forward(p, gaussian(rng, 6, 4), "train")
        grads, gx = single_backward(p, cache, np.zeros((6, 3)))
        for g in list(grads.values()) + [gx]:
            np.testing.assert_array_equal(g, 0.0)

    def test_sum_loss_matches_finite_differences(self, rng):
        p = init_single(5, 6, 4, rng)
        p.b1 = gaussian(rng, 1, 6, 0.0, 0.1).ravel()
        x = gaussian(rng, 7, 5)
        q = p.copy()
        _, cache = single_forward(q, x, "train")
        grads, _ = single_backward(p, cache, np.ones((7, 4)))
        for name, base in p.trainable().items():
            def f(v, name=name):
                r = p.copy()
                r.set_arrays({name: v.reshape(base.shape)})
                return float(np.sum(single_forward(r, x, "train")[0]))
            num = finite_diff_grad(f, base.ravel())
            assert relative_error(grads[name].ravel(), num, floor=1e-6) < 1e-4, name

    def test_eval_cache_rejected(self, rng):
        p = init_single(4, 5, 3, rng)
        _, cache = single_forward(p, gaussian(rng, 3, 4), "eval")
        with pytest.raises(ContractError):
            single_backward(p, cache, np.zeros((3, 3)))

    def test_cache_single_use(self, rng):
        p = init_single(4, 5, 3, rng)
        _, cache = single_forward(p, gaussian(rng, 3, 4), "train")
        single_backward(p, cache, np.zeros((3, 3)))
        with pytest.raises(ContractError):
            single_backward(p, cache, np.zeros((3, 3)))


class TestTwoBranch:
    def test_zero_fusion_averages(self, rng):
        p = init_two(6, 8, 4, rng)
        p.fusion_W[:] = 0.0
        p.fusion_b[:] = 0.0
        l, u, v, _ = two_forward(p, gaussian(rng, 5, 6), gaussian(rng, 5, 6))
        np.testing.assert_allclose(l, (u + v) / 2, atol=1e-15)

    def test_recomposition(self, rng):
        p = init_two(6, 8, 4, rng)
        p.fusion_W = gaussian(rng, 8, 2)
        xf, xv = gaussian(rng, 5, 6), gaussian(rng, 5, 6)
        l, u, v, _ = two_forward(p, xf, xv)
        z = np.concatenate([u, v], 1) @ p.fusion_W + p.fusion_b
        a = np.exp(z) / np.exp(z).sum(1, keepdims=True)
        np.testing.assert_allclose(l, a[:, :1] * u + a[:, 1:] * v, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31))
    def test_fused_rows_inside_unit_ball(self, seed):
        r = Rng(seed)
        p = init_two(5, 6, 4, r)
        p.fusion_W = gaussian(r, 8, 2, 0.0, 3.0)
        try:
            l, _, _, _ = two_forward(p, gaussian(r, 4, 5), gaussian(r, 4, 5))
        except DegenerateVectorError:
            assume(False)  # every hidden unit dead for some row
        assert np.all(np.linalg.norm(l, axis=1) <= 1.0 + 1e-12)

    def test_zero_upstream_gives_zero(self, rng):
        p = init_two(6, 8, 4, rng)
        *_, cache = two_forward(p, gaussian(rng, 5, 6), gaussian(rng, 5, 6))
        for g in two_backward(p, cache, np.zeros((5, 4))).values():
            np.testing.assert_array_equal(g, 0.0)

    def test_face_gradient_only_through_attention_when_voice_saturates(self, rng):
        p = init_two(5, 6, 4, rng)
        p.fusion_W = gaussian(rng, 8, 2, 0.0, 0.1)
        p.fusion_b = np.array([-40.0, 40.0])  # a_f ~ 4e-35
        xf, xv = gaussian(rng, 4, 5), gaussian(rng, 4, 5)
        w = gaussian(rng, 4, 4)
        *_, cache = two_forward(p, xf, xv)
        grads = two_backward(p, cache, w)
        assert np.abs(grads["face.W1"]).max() < 1e-25
        base = p.face.W1

        def f(x):
            q = p.copy()
            q.set_arrays({"face.W1": x.reshape(base.shape)})
            return float(np.sum(two_forward(q, xf, xv)[0] * w))
        np.testing.assert_allclose(finite_diff_grad(f, base.ravel()), 0.0, atol=1e-9)

    def test_full_finite_difference(self, rng):
        p = init_two(5, 6, 4, rng)
        p.fusion_W = gaussian(rng, 8, 2)
        xf, xv = gaussian(rng, 6, 5), gaussian(rng, 6, 5)
        w = gaussian(rng, 6, 4)
        *_, cache = two_forward(p, xf, xv)
        grads = two_backward(p, cache, w)
        for name, base in p.trainable().items():
            def f(x, name=name):
                q = p.copy()
                q.set_arrays({name: x.reshape(base.shape)})
                return float(np.sum(two_forward(q, xf, xv)[0] * w))
            assert relative_error(grads[name].ravel(), finite_diff_grad(f, base.ravel()), floor=1e-6) < 1e-4, name

    def test_unequal_batches(self, rng):
        p = init_two(5, 6, 4, rng)
        with pytest.raises(DimensionError):
            two_forward(p, np.ones((3, 5)), np.ones((4, 5)))
