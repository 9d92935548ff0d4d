import numpy as np
import pytest

from kgv.embeddings import VARIANTS, init_embeddings
from kgv.gradcheck import TOLERANCE, check_variant, parameter_count, report, toy_problem
from kgv.kg import hierarchy_closure
from kgv.model import KGVModel
from kgv.nn import (
    Adam,
    Decoder,
    Encoder,
    adam_step,
    conv3x3_forward,
    decode,
    encode,
    init_decoder,
    init_encoder,
    maxpool2_backward,
    maxpool2_forward,
    predict,
    xavier_uniform,
)
from kgv.objective import softmax


def conv_oracle(x, w, b):
    """Direct six-loop 'same' convolution."""
    B, H, W, C = x.shape
    F = w.shape[-1]
    out = np.zeros((B, H, W, F))
    for n in range(B):
        for i in range(H):
            for j in range(W):
                for di in range(3):
                    for dj in range(3):
                        ii, jj = i + di - 1, j + dj - 1
                        if 0 <= ii < H and 0 <= jj < W:
                            out[n, i, j] += x[n, ii, jj] @ w[di, dj]
    return out + b


class TestInit:
    def test_xavier_bound(self):
        w = xavier_uniform(np.random.default_rng(0), (20000,), 4, 2)
        assert np.abs(w).max() <= 1.0 and np.abs(w).max() > 0.999

    def test_deterministic_and_zero_biases(self):
        a, b = init_encoder(3), init_encoder(3)
        for k in a.params:
            assert a.params[k].tobytes() == b.params[k].tobytes()
            if k.endswith(".b"):
                assert (a.params[k] == 0).all()
        dec = init_decoder(3, num_classes=5)
        assert dec.params["w"].shape == (64, 5) and (dec.params["b"] == 0).all()

    def test_encoder_bounds(self):
        enc = init_encoder(0)
        bound = np.sqrt(6.0 / (9 * 3 + 9 * 16))
        assert np.abs(enc.params["conv0.w"]).max() <= bound
        assert enc.params["proj.w"].shape == (4 * 4 * 64, 64)


class TestEncoder:
    def test_conv_matches_loops(self):
        rng = np.random.default_rng(1)
        x, w, b = rng.normal(size=(2, 5, 4, 3)), rng.normal(size=(3, 3, 3, 2)), rng.normal(size=2)
        out, _ = conv3x3_forward(x, w, b)
        assert np.allclose(out, conv_oracle(x, w, b), atol=1e-12)

    def test_maxpool_first_index_on_ties(self):
        x = np.ones((1, 2, 2, 1))
        out, idx = maxpool2_forward(x)
        assert out[0, 0, 0, 0] == 1.0 and idx[0, 0, 0, 0] == 0
        dx = maxpool2_backward(np.ones((1, 1, 1, 1)), idx)
        assert dx[0, :, :, 0].tolist() == [[1.0, 0.0], [0.0, 0.0]]

    def test_zero_weights_give_zero(self):
        enc = init_encoder(0)
        for v in enc.params.values():
            v[:] = 0.0
        assert (encode(np.zeros((32, 32, 3)), enc) == 0).all()

    def test_deterministic(self):
        enc = init_encoder(0)
        img = np.random.default_rng(0).uniform(size=(32, 32, 3))
        z1, z2 = encode(img, enc), encode(img.copy(), enc)
        assert z1.shape == (64,) and z1.tobytes() == z2.tobytes()
        batch = enc(np.stack([img, img]))
        assert np.allclose(batch[0], z1) and np.allclose(batch[1], z1)

    def test_wrong_shape(self):
        with pytest.raises(ValueError, match="shape"):
            encode(np.zeros((28, 28, 3)), init_encoder(0))

    def test_pixel_perturbation_is_smooth(self):
        enc = init_encoder(0, dtype=np.float64)
        img = np.random.default_rng(0).uniform(size=(32, 32, 3))
        base = encode(img, enc)
        diffs = []
        for delta in (1e-6, 2e-6, 4e-6):
            p = img.copy()
            p[10, 12, 1] += delta
            diffs.append(np.linalg.norm(encode(p, enc) - base))
        # linear in delta away from ties
        assert diffs[1] / diffs[0] == pytest.approx(2.0, rel=1e-3)
        assert diffs[2] / diffs[0] == pytest.approx(4.0, rel=1e-3)


class TestDecoder:
    def test_zero_decoder_ties_to_zero(self):
        dec = Decoder({"w": np.zeros((4, 3)), "b": np.zeros(3)})
        logits = decode(np.ones(4), dec)
        assert np.allclose(softmax(logits), 1 / 3)
        assert predict(logits) == 0

    def test_argmax(self):
        assert predict(np.array([0.1, 5.0, -2.0])) == 1

    def test_softmax_normalized(self):
        logits = np.random.default_rng(0).normal(scale=10, size=(50, 7))
        assert np.allclose(softmax(logits).sum(axis=1), 1.0, atol=1e-9)


class TestAdam:
    def test_first_step(self):
        p = {"x": np.array([0.0])}
        Adam(lr=0.001).step(p, {"x": np.array([1.0])})
        assert p["x"][0] == pytest.approx(-0.001 / (1 + 1e-8), abs=1e-12)

    def test_zero_gradient(self):
        p = {"x": np.array([0.5, -0.5])}
        opt = Adam()
        for _ in range(5):
            opt.step(p, {"x": np.zeros(2)})
        assert p["x"].tolist() == [0.5, -0.5]

    def test_frozen_relation_unchanged(self, toy_kg):
        tables = init_embeddings(hierarchy_closure(toy_kg), 4, 0, "transH")
        opt = Adam(lr=0.1)
        rng = np.random.default_rng(0)
        for _ in range(100):
            grads = {k: rng.normal(size=v.shape) for k, v in tables.params.items()}
            tables.mask_gradients(grads)
            adam_step(tables.params, grads, opt, post_step=tables.project)
            assert (tables.params["rel"][0] == 0).all()
            assert np.allclose(np.linalg.norm(tables.params["normal"], axis=1), 1.0)

    def test_log_var_clamped(self, toy_kg):
        tables = init_embeddings(hierarchy_closure(toy_kg), 4, 0)
        opt = Adam(lr=1.0)
        for _ in range(20):
            grads = {k: np.full(v.shape, -1.0) for k, v in tables.params.items()}
            adam_step(tables.params, grads, opt, post_step=tables.project)
            assert tables.params["log_var"].max() <= 6.0

    def test_separable_toy_converges(self):
        rng = np.random.default_rng(0)
        x = np.concatenate([rng.normal(-2, 0.5, (20, 2)), rng.normal(2, 0.5, (20, 2))])
        y = np.repeat([0, 1], 20)
        dec = Decoder.init(0, d=2, num_classes=2)
        opt = Adam(lr=0.05)
        from kgv.objective import ce_loss_batch

        for _ in range(500):
            ce, g = ce_loss_batch(dec(x), y)
            grads, _ = dec.backward(g / len(y), x)
            opt.step(dec.params, grads)
        assert ce_loss_batch(dec(x), y)[0].mean() < 0.01


class TestEndToEnd:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_gradcheck(self, variant):
        errors = check_variant(variant)
        assert max(errors.values()) <= TOLERANCE, errors
        assert parameter_count(variant) <= 500

    def test_report(self):
        text, ok = report({"gaussian": {"enc.conv0.w": 1e-6, "kg.mu": 2e-4}})
        assert not ok and "FAIL" in text

    def test_beta_zero_no_table_gradients(self):
        model, x, labels, masks, w, eps = toy_problem("gaussian")
        _, grads = model.loss_and_grads(x, labels, masks, w, 0.0, eps)
        assert not any(k.startswith("kg.") for k in grads)

    def test_duplicate_sample_same_gradient(self):
        model, x, labels, masks, w, eps = toy_problem("transE")
        _, g1 = model.loss_and_grads(x[:1], labels[:1], masks[:1], w[:1], 0.5, eps)
        _, g2 = model.loss_and_grads(np.concatenate([x[:1]] * 2), np.repeat(labels[:1], 2),
                                     np.concatenate([masks[:1]] * 2), np.repeat(w[:1], 2), 0.5, eps)
        for k in g1:
            assert np.allclose(g1[k], g2[k], atol=1e-12)

    def test_checkpoint_round_trip(self, tmp_path):
        model = toy_problem("transH")[0]
        model.save(tmp_path / "m.npz")
        back = KGVModel.load(tmp_path / "m.npz")
        assert back.digest() == model.digest()
        assert back.tables.variant == "transH" and isinstance(back.encoder, Encoder)
