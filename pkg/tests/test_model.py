import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from croloss.checks import model_gradient_error, tiny_problem
from croloss.kernels import Kernel
from croloss.losses import LossSpec
from croloss.model import PARAM_NAMES, TwoTowerModel, normalize
from croloss.trainer import batch_loss
from croloss.weighting import make_weighting


@pytest.fixture
def model():
    return TwoTowerModel.init(50, dim=8, hidden=8, out=8, seed=3)


def identity_tower(m, tower):
    d = m.dims[0]
    m.params[f"{tower}_w1"] = np.eye(d)
    m.params[f"{tower}_b1"] = np.zeros(d)
    m.params[f"{tower}_w2"] = np.eye(d)
    m.params[f"{tower}_b2"] = np.zeros(d)


class TestInit:
    def test_shapes_and_defaults(self):
        m = TwoTowerModel.init(100)
        assert m.dims == (32, 32, 32)
        assert m.tau == 10.0
        assert m.params["item_emb"].shape == (100, 32)
        assert set(m.params) == set(PARAM_NAMES)

    def test_seeded(self):
        a, b = TwoTowerModel.init(20, seed=1), TwoTowerModel.init(20, seed=1)
        for k in PARAM_NAMES:
            np.testing.assert_array_equal(a.params[k], b.params[k])

    def test_rejects_bad_tau(self):
        with pytest.raises(ValueError):
            TwoTowerModel.init(5, tau=0.0)


class TestTowers:
    def test_zero_embeddings_and_biases(self, model):
        model.params["item_emb"][:] = 0
        for k in ("user_b1", "user_b2"):
            model.params[k][:] = 0
        np.testing.assert_array_equal(model.user_forward(np.array([1, 2, 3])), 0.0)

    def test_single_item_pools_to_its_embedding(self, model):
        identity_tower(model, "user")
        model.params["item_emb"] = np.abs(model.params["item_emb"])  # survives the ReLU
        np.testing.assert_array_equal(model.user_forward(np.array([7]))[0], model.params["item_emb"][7])

    def test_duplicate_history_is_idempotent(self, model):
        np.testing.assert_allclose(model.user_forward(np.array([4, 4])), model.user_forward(np.array([4])),
                                   rtol=1e-15)

    def test_padding_is_ignored(self, model):
        hist = np.array([[3, 9, 0, 0], [3, 9, 11, 12]])
        out = model.user_forward(hist, np.array([2, 2]))
        np.testing.assert_array_equal(out[0], out[1])

    def test_rejects_empty_and_out_of_range(self, model):
        with pytest.raises(ValueError):
            model.user_forward(np.array([[1, 2]]), np.array([0]))
        with pytest.raises(IndexError):
            model.user_forward(np.array([50]))
        with pytest.raises(IndexError):
            model.item_forward(np.array([-1]))

    def test_item_tower_examples(self, model):
        for k in ("item_w1", "item_b1", "item_w2", "item_b2"):
            model.params[k][:] = 0
        np.testing.assert_array_equal(model.item_forward(np.array([5])), 0.0)
        identity_tower(model, "item")
        model.params["item_emb"] = np.abs(model.params["item_emb"])
        np.testing.assert_array_equal(model.item_forward(np.array([5]))[0], model.params["item_emb"][5])
        np.testing.assert_array_equal(model.item_forward(np.array([5, 5]))[0],
                                      model.item_forward(np.array([5, 5]))[1])


class TestScore:
    def test_examples(self, model):
        u = np.array([1.0, 2.0, 3.0])
        assert model.score(u, u) == pytest.approx(10.0, rel=1e-15)
        assert model.score(np.array([1.0, 0.0]), np.array([0.0, 2.0])) == 0.0
        v = np.array([-1.0, 0.5, 2.0])
        assert model.score(u, 3 * v) == pytest.approx(model.score(u, v), rel=1e-14)

    def test_zero_vector_is_flagged(self, model, caplog):
        with caplog.at_level(logging.WARNING):
            assert model.score(np.zeros(3), np.ones(3)) == 0.0
        assert "degenerate" in caplog.text

    @settings(max_examples=50)
    @given(st.integers(0, 10 ** 6))
    def test_bound(self, seed):
        rng = np.random.default_rng(seed)
        m = TwoTowerModel.init(30, 4, 4, 4, tau=7.0, seed=seed)
        pos, neg, _ = m.forward_batch(rng.integers(0, 30, (3, 5)), np.array([5, 2, 1]),
                                      rng.integers(0, 30, 3), rng.integers(0, 30, 9))
        assert np.all(np.abs(pos) <= 7.0 + 1e-12) and np.all(np.abs(neg) <= 7.0 + 1e-12)

    @pytest.mark.parametrize("c", [1e-3, 0.5, 4.0, 1e3])
    def test_cosine_invariance(self, c):
        rng = np.random.default_rng(0)
        m, samples, batch = tiny_problem(rng)
        args = (samples.history, samples.length, samples.target, batch.negatives)
        pos, neg, _ = m.forward_batch(*args)
        for tower in ("user", "item"):
            scaled = m.copy()
            scaled.params[f"{tower}_w2"] *= c
            scaled.params[f"{tower}_b2"] *= c
            p2, n2, _ = scaled.forward_batch(*args)
            np.testing.assert_allclose(p2, pos, atol=1e-6)
            np.testing.assert_allclose(n2, neg, atol=1e-6)


SPEC = LossSpec("croloss", kernel=Kernel.parse("sigmoid"), weighting=make_weighting(1.0, 30))


class TestBackward:
    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        err = None
        while err is None:
            err = model_gradient_error(SPEC, *tiny_problem(rng))
        assert err < 1e-5

    def test_zero_in_zero_out(self):
        m, samples, batch = tiny_problem(np.random.default_rng(1))
        _, cache, gaps = batch_loss(m, samples, batch, SPEC)
        grads = m.backward(cache, np.zeros(len(gaps)), np.zeros(gaps.gaps.shape))
        for g in grads.values():
            assert not np.any(g)

    def test_untouched_rows_are_zero(self):
        m, samples, batch = tiny_problem(np.random.default_rng(2))
        out, cache, _ = batch_loss(m, samples, batch, SPEC)
        grads = m.backward(cache, out.grad_pos, out.grad_neg)
        touched = set(samples.target.tolist()) | set(batch.negatives.tolist())
        for row, length in zip(samples.history, samples.length):
            touched |= set(row[:length].tolist())
        untouched = sorted(set(range(30)) - touched)
        assert untouched
        assert not np.any(grads["item_emb"][untouched])
        assert np.any(grads["item_emb"][sorted(touched)])

    def test_shape_mismatch(self):
        m, samples, batch = tiny_problem(np.random.default_rng(3))
        _, cache, gaps = batch_loss(m, samples, batch, SPEC)
        with pytest.raises(ValueError):
            m.backward(cache, np.zeros(len(gaps) + 1), np.zeros(gaps.gaps.shape))

    def test_deterministic(self):
        m, samples, batch = tiny_problem(np.random.default_rng(4))
        results = []
        for _ in range(2):
            out, cache, _ = batch_loss(m, samples, batch, SPEC)
            results.append(m.backward(cache, out.grad_pos, out.grad_neg))
        for k in PARAM_NAMES:
            np.testing.assert_array_equal(results[0][k], results[1][k])

    def test_accumulates(self):
        m, samples, batch = tiny_problem(np.random.default_rng(5))
        out, cache, _ = batch_loss(m, samples, batch, SPEC)
        once = m.backward(cache, out.grad_pos, out.grad_neg)
        twice = m.backward(cache, out.grad_pos, out.grad_neg, m.backward(cache, out.grad_pos, out.grad_neg))
        for k in PARAM_NAMES:
            np.testing.assert_allclose(twice[k], 2 * once[k], rtol=1e-14, atol=1e-300)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, model, tmp_path):
        model.tau = 7.25
        model.save(tmp_path / "m.npz")
        back = TwoTowerModel.load(tmp_path / "m.npz")
        assert back.tau == 7.25
        for k in PARAM_NAMES:
            assert back.params[k].dtype == model.params[k].dtype
            assert back.params[k].tobytes() == model.params[k].tobytes()

    def test_file_bytes_reproducible(self, model, tmp_path):
        model.save(tmp_path / "a.npz")
        model.copy().save(tmp_path / "b.npz")
        assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()

    def test_version_checked(self, model, tmp_path):
        np.savez(tmp_path / "old.npz", version=np.array(99), tau=np.array(10.0), **model.params)
        with pytest.raises(ValueError):
            TwoTowerModel.load(tmp_path / "old.npz")


def test_normalize_unit_rows():
    x = np.random.default_rng(0).normal(size=(5, 3))
    xh, n = normalize(x)
    np.testing.assert_allclose(np.linalg.norm(xh, axis=1), 1.0, rtol=1e-15)
    np.testing.assert_allclose(n[:, 0], np.linalg.norm(x, axis=1))
