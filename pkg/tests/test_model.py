import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import eq1
from pbj import tensor as T
from pbj.model import (
    MAX_SIMILARITY,
    BackboneConfig,
    BaselineModel,
    PBJModel,
    build_model,
    class_scores,
    distance_array,
    init_W,
    similarity,
    softmax_confidence,
)
from pbj.tensor import Tensor
from pbj.training import pbj_batch_loss
from support import gradient_errors, random_case

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def m_of(anchor, class_latents):
    return distance_array(Tensor(np.asarray(anchor, float)), Tensor(np.asarray(class_latents, float))).data


class TestDistanceArray:
    @pytest.mark.parametrize(
        "d, expected", [(0.0, 23.02585), (1.0, 0.693147), (3.0, 0.105361)]
    )
    def test_reference_values(self, d, expected):
        m = m_of([0.0, 0.0], [[d, 0.0], [0.0, 0.0]])
        assert m[0] == pytest.approx(expected, abs=5e-6)
        assert m[0] == pytest.approx(eq1(d), rel=1e-12)

    def test_zero_distance_is_the_upper_bound(self):
        assert m_of([1.0, 2.0], [[1.0, 2.0]])[0] == pytest.approx(math.log(1e10), rel=1e-12)
        assert MAX_SIMILARITY == pytest.approx(math.log(1e10), rel=1e-15)

    def test_batched_anchor_sets(self, rng):
        a = rng.normal(size=(4, 3))
        cl = rng.normal(size=(4, 5, 3))
        m = m_of(a, cl)
        for b in range(4):
            np.testing.assert_allclose(m[b], m_of(a[b], cl[b]), rtol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            m_of([0.0, 0.0], [[0.0, 0.0, 0.0]])

    def test_numpy_twin_agrees(self, rng):
        a, cl = rng.normal(size=3), rng.normal(size=(6, 3))
        np.testing.assert_allclose(similarity(((cl - a) ** 2).sum(1)), m_of(a, cl), rtol=1e-12)

    @settings(max_examples=300, deadline=None)
    @given(st.floats(0, 1e3), st.floats(0, 1e3))
    def test_monotone_and_bounded(self, d1, d2):
        lo, hi = sorted((d1, d2))
        m_lo, m_hi = similarity([lo**2, hi**2])
        assert 0 < m_hi <= m_lo <= MAX_SIMILARITY + 1e-12
        if hi - lo > 1e-6 * max(hi, 1.0):
            assert m_hi < m_lo

    @settings(max_examples=200, deadline=None)
    @given(
        arrays(np.float64, (3,), elements=finite),
        arrays(np.float64, (4, 3), elements=finite),
        arrays(np.float64, (3,), elements=finite),
    )
    def test_translation_invariance(self, a, cl, shift):
        np.testing.assert_allclose(m_of(a + shift, cl + shift), m_of(a, cl), rtol=1e-6, atol=1e-6)


class TestInitW:
    def test_two_classes(self):
        np.testing.assert_array_equal(init_W(2, 100.0), [[100, -100], [-100, 100]])

    @pytest.mark.parametrize("gamma, off", [(100.0, -11.1111), (1000.0, -111.111)])
    def test_ten_classes(self, gamma, off):
        W = init_W(10, gamma, dtype=np.float64)
        np.testing.assert_array_equal(np.diag(W), gamma)
        off_diag = W[~np.eye(10, dtype=bool)]
        np.testing.assert_allclose(off_diag, off, atol=1e-3)
        np.testing.assert_allclose(off_diag, -gamma / 9, rtol=1e-15)

    @pytest.mark.parametrize("C, gamma", [(1, 1.0), (0, 1.0), (3, 0.0), (3, -1.0)])
    def test_rejects(self, C, gamma):
        with pytest.raises(ValueError):
            init_W(C, gamma)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(2, 200), st.floats(1e-3, 1e4))
    def test_rows_sum_to_zero(self, C, gamma):
        W = init_W(C, gamma, dtype=np.float64)
        assert W.shape == (C, C)
        assert np.abs(W.sum(axis=1)).max() <= 1e-9 * gamma


class TestClassScores:
    def test_identity(self):
        m = Tensor([0.3, 1.2, 5.0])
        np.testing.assert_array_equal(class_scores(m, Tensor(np.eye(3))).data, m.data)

    def test_fresh_two_class_head(self):
        m = Tensor([math.log(1e10), math.log(2.0)])
        s = class_scores(m, Tensor(init_W(2, 100.0, np.float64))).data
        np.testing.assert_allclose(s, [2233.2, -2233.2], atol=0.2)
        np.testing.assert_allclose(T.softmax(s), [1.0, 0.0], atol=1e-12)

    def test_constant_distance_array_is_uninformative(self):
        s = class_scores(Tensor(np.full(5, 0.7)), Tensor(init_W(5, 100.0, np.float64))).data
        np.testing.assert_allclose(s, 0.0, atol=1e-12)
        np.testing.assert_allclose(T.softmax(s), 0.2)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            class_scores(Tensor(np.ones(3)), Tensor(np.eye(4)))

    @settings(max_examples=200, deadline=None)
    @given(st.integers(2, 12).flatmap(lambda C: st.tuples(st.permutations(range(C)), arrays(np.float64, (C,), elements=st.floats(0, 23)))))
    def test_permutation_equivariance(self, case):
        perm, m = case
        perm = np.asarray(perm)
        W = Tensor(init_W(len(m), 100.0, np.float64))
        s = class_scores(Tensor(m), W).data
        s_perm = class_scores(Tensor(m[perm]), W).data
        np.testing.assert_allclose(s_perm, s[perm], rtol=1e-9, atol=1e-9)
        top2 = np.sort(s)[-2:]
        if top2[1] - top2[0] > 1e-6:
            assert perm[np.argmax(s_perm)] == np.argmax(s)


class TestForward:
    def test_anchor_on_an_example_picks_its_class(self, rng):
        model = PBJModel(BackboneConfig(input_shape=(3,), latent_dim=4), 3, seed=0, dtype=np.float64)
        examples = rng.normal(size=(3, 3)) * 10
        latents = model.forward_latent(examples)
        for k in range(3):
            scores = model(examples[k : k + 1], latents)
            assert scores.shape == (1, 3)
            assert int(np.argmax(scores.data)) == k

    def test_batch_shape(self, rng):
        model = PBJModel(BackboneConfig(input_shape=(2,)), 4, seed=0)
        cl = model.forward_latent(rng.normal(size=(4, 2)).astype(np.float32))
        assert model(rng.normal(size=(7, 2)).astype(np.float32), cl).shape == (7, 4)

    def test_wrong_input_shape(self):
        model = PBJModel(BackboneConfig(input_shape=(2,)), 2, seed=0)
        with pytest.raises(ValueError, match="shape"):
            model.forward_latent(np.zeros((1, 3)))

    def test_identical_inputs_identical_latents(self, rng):
        model = PBJModel(BackboneConfig(input_shape=(5,)), 2, seed=0)
        x = np.repeat(rng.normal(size=(1, 5)).astype(np.float32), 3, axis=0)
        out = model.forward_latent(x).data
        assert out.shape == (3, 8)
        assert (out == out[0]).all()

    def test_eval_latent_independent_of_batch(self, rng):
        cfg = BackboneConfig(kind="cnn3", input_shape=(1, 28, 28), latent_dim=6, channels=(4, 6, 6), fc_width=16)
        model = PBJModel(cfg, 3, seed=0)
        model.train()
        model.forward_latent(rng.normal(size=(8, 1, 28, 28)).astype(np.float32))  # move running stats
        model.eval()
        x = rng.normal(size=(5, 1, 28, 28)).astype(np.float32)
        batch = model.forward_latent(x).data
        alone = model.forward_latent(x[2:3]).data
        np.testing.assert_allclose(alone[0], batch[2], atol=1e-6)

    def test_cnn3_rejects_odd_pooling(self):
        # 28 -> 14 -> 7 with padding 1 everywhere; the third block gets an odd map
        with pytest.raises(ValueError, match="maxpool2"):
            PBJModel(BackboneConfig(kind="cnn3", input_shape=(1, 28, 28), paddings=(1, 1, 1)), 2)

    def test_weight_sharing_by_identity(self, balanced_toy):
        from pbj.data import make_training_batch

        model = PBJModel(BackboneConfig(input_shape=(3,)), 10, seed=0)
        seen = []
        original = model.backbone.__class__.__call__

        class Spy(model.backbone.__class__):
            def __call__(self, x):
                seen.append({k: id(v) for k, v in self.params.items()})
                return original(self, x)

        model.backbone.__class__ = Spy
        batch = make_training_batch(balanced_toy, [0, 7, 13], seed=0)
        pbj_batch_loss(model, balanced_toy, batch)
        model.forward_latent(balanced_toy.features[:2])
        assert len(seen) == 2
        assert seen[0] == seen[1]
        assert seen[0]["proj.weight"] == id(model.named_parameters()["backbone.proj.weight"])


class TestGradients:
    @pytest.mark.parametrize("C", [2, 3, 10])
    @pytest.mark.parametrize("kind", ["mlp", "cnn3"])
    def test_full_composition_matches_finite_differences(self, kind, C):
        model, dataset, batch = random_case(kind, C, seed=C)
        errors, kinks = gradient_errors(model, dataset, batch)
        assert set(errors) == set(model.named_parameters())
        assert max(errors.values()) < 1e-4, errors
        assert kinks <= 0.01 * sum(p.data.size for p in model.parameters())


class TestBaseline:
    def test_shapes(self, rng):
        pbj = PBJModel(BackboneConfig(input_shape=(2,)), 3, seed=0)
        base = BaselineModel(BackboneConfig(input_shape=(2,)), 3, seed=0)
        assert base(rng.normal(size=(5, 2)).astype(np.float32)).shape == (5, 3)
        bb = {k: v.shape for k, v in pbj.named_parameters().items() if k.startswith("backbone.")}
        assert bb == {k: v.shape for k, v in base.named_parameters().items() if k.startswith("backbone.")}
        assert base.head["weight"].shape == (3, 8)

    def test_uniform_scores_confidence(self):
        np.testing.assert_allclose(softmax_confidence(np.zeros((2, 4))), 0.25)

    def test_build_model(self):
        assert isinstance(build_model("baseline", BackboneConfig(), 2, seed=0), BaselineModel)
        with pytest.raises(ValueError):
            build_model("resnet", BackboneConfig(), 2)


class TestConfig:
    def test_round_trip(self):
        cfg = BackboneConfig(kind="cnn3", input_shape=(1, 28, 28), latent_dim=256)
        assert BackboneConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize("kw", [{"kind": "resnet"}, {"latent_dim": 0}, {"hidden": (4, 0)}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            BackboneConfig(**kw)

    def test_fingerprint_tracks_weights(self):
        model = PBJModel(BackboneConfig(), 2, seed=0)
        before = model.fingerprint()
        model.W.data[0, 0] += 1
        assert model.fingerprint() != before
