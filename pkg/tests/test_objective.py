import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgv.embeddings import init_embeddings, score_matrix
from kgv.kg import build_mask, hierarchy_closure
from kgv.objective import batch_objective, ce_loss, log_softmax, reg_loss, softmax, total_loss


def reg_oracle(S, M, eps):
    """Scalar double loop over every entry."""
    pos_sum = pos_n = neg_sum = neg_n = 0.0
    for i in range(S.shape[0]):
        for j in range(S.shape[1]):
            if M[i, j]:
                pos_sum += S[i, j]
                pos_n += 1
            else:
                neg_sum += max(0.0, eps - S[i, j])
                neg_n += 1
    return pos_sum / pos_n, neg_sum / neg_n


def random_mask(rng, shape):
    M = (rng.uniform(size=shape) < 0.3).astype(np.uint8)
    M.flat[0], M.flat[-1] = 1, 0
    return M


class TestRegLoss:
    def test_hand_example(self):
        S = np.array([[2.0, 1.0, 5.0]])
        M = np.array([[1, 0, 0]])
        assert reg_loss(S, M, 3.0) == (2.0, 1.0, 3.0)

    def test_hinge_inactive(self):
        S = np.array([[2.0, 9.0, 5.0]])
        M = np.array([[1, 0, 0]])
        _, neg, _ = reg_loss(S, M, 3.0)
        assert neg == 0.0

    def test_matches_double_loop(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            S = rng.normal(3.0, 2.0, (3, 5))
            M = random_mask(rng, (3, 5))
            pos, neg, reg = reg_loss(S, M, 3.0)
            opos, oneg = reg_oracle(S, M, 3.0)
            assert abs(pos - opos) <= 1e-12 and abs(neg - oneg) <= 1e-12
            assert reg == pytest.approx(pos + neg, abs=1e-15)

    def test_degenerate_masks(self):
        with pytest.raises(ValueError):
            reg_loss(np.zeros((2, 2)), np.ones((2, 2)), 1.0)
        with pytest.raises(ValueError):
            reg_loss(np.zeros((2, 2)), np.zeros((2, 2)), 1.0)
        with pytest.raises(ValueError, match="shape"):
            reg_loss(np.zeros((2, 2)), np.ones((2, 3)), 1.0)

    def test_gradient(self):
        rng = np.random.default_rng(1)
        S = rng.normal(3.0, 2.0, (3, 5))
        M = random_mask(rng, (3, 5))
        *_, dS = reg_loss(S, M, 3.0, return_grad=True)
        h = 1e-6
        for idx in np.ndindex(S.shape):
            Sp, Sm = S.copy(), S.copy()
            Sp[idx] += h
            Sm[idx] -= h
            num = (reg_loss(Sp, M, 3.0)[2] - reg_loss(Sm, M, 3.0)[2]) / (2 * h)
            assert dS[idx] == pytest.approx(num, abs=1e-7)
            if not M[idx] and S[idx] > 3.0:
                assert dS[idx] == 0.0
            if M[idx]:
                assert dS[idx] == pytest.approx(1.0 / M.sum())

    def test_batched_matches_per_sample(self):
        rng = np.random.default_rng(2)
        S = rng.normal(3.0, 2.0, (4, 3, 5))
        M = np.stack([random_mask(rng, (3, 5)) for _ in range(4)])
        pos, neg, reg = reg_loss(S, M, 2.5)
        for b in range(4):
            assert reg[b] == pytest.approx(reg_loss(S[b], M[b], 2.5)[2], abs=1e-14)


class TestCrossEntropy:
    def test_uniform(self):
        assert ce_loss([0.0, 0.0], 0) == pytest.approx(math.log(2))

    def test_stable_for_large_logits(self):
        v = ce_loss([1000.0, 0.0], 0)
        assert math.isfinite(v) and v == pytest.approx(0.0, abs=1e-12)

    def test_three_classes(self):
        oracle = -math.log(math.exp(3) / (math.exp(1) + math.exp(2) + math.exp(3)))
        assert ce_loss([1.0, 2.0, 3.0], 2) == pytest.approx(oracle, abs=1e-12)
        assert ce_loss([1.0, 2.0, 3.0], 2) == pytest.approx(0.407606, abs=1e-6)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            ce_loss([0.0, 1.0], 2)
        with pytest.raises(ValueError):
            ce_loss([0.0, 1.0], -1)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=8), st.floats(-1e3, 1e3), st.data())
    def test_shift_invariance(self, logits, c, data):
        y = data.draw(st.integers(0, len(logits) - 1))
        shifted = [v + c for v in logits]
        assert ce_loss(shifted, y) == pytest.approx(ce_loss(logits, y), abs=1e-9)
        assert ce_loss(logits, y) >= 0.0
        assert softmax(np.array(logits)).sum() == pytest.approx(1.0, abs=1e-9)

    def test_log_softmax_batch(self):
        z = np.array([[1.0, 2.0], [3.0, -1.0]])
        assert np.allclose(np.exp(log_softmax(z)).sum(axis=1), 1.0)


class TestTotal:
    def test_arithmetic(self):
        assert total_loss(0.7, 3.0, 0.1) == pytest.approx(1.0)
        assert total_loss(0.7, 3.0, 0.0) == 0.7
        assert total_loss(1.0, 2.0, 0.5) == 2.0

    def test_linear_in_reg(self):
        a, b = total_loss(0.3, 1.0, 0.25), total_loss(0.3, 5.0, 0.25)
        assert (b - a) / 4.0 == 0.25

    def test_negative_beta(self):
        with pytest.raises(ValueError):
            total_loss(1.0, 1.0, -0.1)


def _toy_batch(toy_kg, B=3, seed=0):
    closed = hierarchy_closure(toy_kg)
    rng = np.random.default_rng(seed)
    tables = init_embeddings(closed, 4, seed)
    cmap = {0: closed.entity_id("Danger"), 1: closed.entity_id("Warning")}
    labels = rng.integers(0, 2, B)
    masks = np.stack([build_mask(closed, cmap, int(y)).bits for y in labels]).astype(float)
    z = rng.normal(size=(B, 4))
    logits = rng.normal(size=(B, 2))
    return z, logits, labels, masks, tables


class TestBatchObjective:
    def test_singleton_batch(self, toy_kg):
        z, logits, labels, masks, tables = _toy_batch(toy_kg, B=1)
        out, *_ = batch_objective(z, logits, labels, masks, np.ones(1), tables, 0.1, 8.0)
        S = score_matrix(tables, z[0])
        _, _, reg = reg_loss(S, masks[0], 8.0)
        expected = total_loss(ce_loss(logits[0], int(labels[0])), reg, 0.1)
        assert out.total == pytest.approx(expected, abs=1e-12)
        assert out.reg == pytest.approx(out.reg_pos + out.reg_neg)

    def test_duplication_invariance(self, toy_kg):
        z, logits, labels, masks, tables = _toy_batch(toy_kg, B=3)
        a, *_ = batch_objective(z, logits, labels, masks, np.ones(3), tables, 0.1, 8.0)
        twice = [np.concatenate([v, v]) for v in (z, logits, labels, masks)]
        b, *_ = batch_objective(*twice, np.ones(6), tables, 0.1, 8.0)
        assert a.total == pytest.approx(b.total, abs=1e-12)

    def test_synthetic_images_skip_ce(self, toy_kg):
        z, logits, labels, masks, tables = _toy_batch(toy_kg, B=3)
        w = np.array([1.0, 1.0, 0.0])
        out, dz, dlogits, _ = batch_objective(z, logits, labels, masks, w, tables, 0.1, 8.0)
        assert (dlogits[2] == 0).all()
        ref, *_ = batch_objective(z[:2], logits[:2], labels[:2], masks[:2], np.ones(2), tables, 0.1, 8.0)
        assert out.ce == pytest.approx(ref.ce)
        assert np.abs(dz[2]).sum() > 0

    def test_beta_zero_is_plain_ce(self, toy_kg):
        z, logits, labels, masks, tables = _toy_batch(toy_kg, B=3)
        out, dz, _, grads = batch_objective(z, logits, labels, masks, np.ones(3), tables, 0.0, 8.0, with_reg=False)
        assert out.total == out.ce and grads is None and (dz == 0).all()

    def test_empty_batch(self, toy_kg):
        z, logits, labels, masks, tables = _toy_batch(toy_kg, B=1)
        with pytest.raises(ValueError, match="empty"):
            batch_objective(z[:0], logits[:0], labels[:0], masks[:0], np.ones(0), tables, 0.1, 8.0)

    def test_gradients_finite_difference(self, toy_kg):
        z, logits, labels, masks, tables = _toy_batch(toy_kg, B=3, seed=4)
        w = np.array([1.0, 1.0, 0.0])
        eps = float(np.mean(score_matrix(tables, z)[masks == 0]))  # generic point, away from hinge kinks

        def f():
            return batch_objective(z, logits, labels, masks, w, tables, 0.3, eps)[0].total

        _, dz, dlogits, tg = batch_objective(z, logits, labels, masks, w, tables, 0.3, eps)
        h = 1e-6
        for arr, grad in [(z, dz), (logits, dlogits), (tables.params["mu"], tg["mu"]),
                          (tables.params["log_var"], tg["log_var"]), (tables.params["rel"], tg["rel"])]:
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                fp = f()
                arr[idx] = old - h
                fm = f()
                arr[idx] = old
                assert grad[idx] == pytest.approx((fp - fm) / (2 * h), rel=1e-4, abs=1e-7)
