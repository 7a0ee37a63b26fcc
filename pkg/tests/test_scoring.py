"""Scoring math: softmax, the two paths, fusion, and their invariants."""

from __future__ import annotations

import math
import random

import numpy as np
import pytest

from openset.core import ClassLabel, ClassOrigin, ClassRegistry, EmbeddingVector
from openset.errors import ScoringError
from openset.scoring import (
    ScoringConfig,
    clip_path,
    dino_path,
    fuse_and_score,
    score_image,
    softmax,
)


class FakeStore:
    """Just the two lookups scoring needs, with hand-picked vectors."""

    def __init__(self, text: dict[str, list[float]], galleries: dict[str, list[list[float]]]):
        self._text = {k: np.asarray(v, dtype=np.float32) for k, v in text.items()}
        self._galleries = {
            k: np.asarray(v, dtype=np.float32) for k, v in galleries.items() if v
        }

    def text_matrix(self, registry):
        return np.stack([self._text[c.canonical] for c in registry.classes])

    def gallery_matrix(self, canonical):
        return self._galleries.get(canonical)


def make_registry(closed, virtual=()):
    reg = ClassRegistry.from_closed(closed)
    if virtual:
        reg, _ = reg.append([ClassLabel.of(v, ClassOrigin.VIRTUAL_SIMILAR) for v in virtual])
    return reg


def softmax_oracle(logits):
    """Direct exponentiation, no stabilization: fine for small inputs."""
    exps = [math.exp(x) for x in logits]
    total = sum(exps)
    return [e / total for e in exps]


class TestSoftmax:
    def test_uniform(self):
        assert np.allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5], atol=1e-15)

    def test_matches_direct_exponentiation(self):
        rng = random.Random(5)
        for _ in range(100):
            logits = [rng.uniform(-10, 10) for _ in range(rng.randint(1, 8))]
            assert np.allclose(softmax(np.array(logits)), softmax_oracle(logits), atol=1e-12)

    def test_shift_invariance(self):
        logits = np.array([1.0, 2.0, 3.0])
        assert np.allclose(softmax(logits), softmax(logits + 123.456), atol=1e-12)

    def test_sums_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            p = softmax(rng.uniform(-30, 30, size=rng.integers(1, 12)))
            assert abs(p.sum() - 1.0) < 1e-12
            assert (p >= 0).all()

    def test_extreme_magnitudes_stay_finite(self):
        p = softmax(np.array([1e4, -1e4, 0.0]))
        assert np.isfinite(p).all()
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        assert p[0] == pytest.approx(1.0, abs=1e-12)

    def test_neg_inf_means_exactly_zero(self):
        p = softmax(np.array([1.0, -np.inf, 2.0]))
        assert p[1] == 0.0
        assert p.sum() == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize(
        "bad",
        [np.array([]), np.array([np.nan, 1.0]), np.array([np.inf, 1.0]), np.array([-np.inf])],
    )
    def test_rejects_bad_input(self, bad):
        with pytest.raises(ScoringError):
            softmax(bad)


class TestClipPath:
    def test_known_geometry(self):
        # alpha along x, beta along y, test vector on x: cosines are 1 and 0.
        reg = make_registry(["alpha", "beta"])
        store = FakeStore({"alpha": [2.0, 0.0], "beta": [0.0, 5.0]}, {})
        cfg = ScoringConfig(tau_text=1.0, tau_image=1.0)
        p = clip_path(EmbeddingVector.wrap([3.0, 0.0]), reg, store, cfg)
        expected = softmax_oracle([1.0, 0.0])
        assert np.allclose(p, expected, atol=1e-12)

    def test_normalization_toggle(self):
        reg = make_registry(["alpha", "beta"])
        store = FakeStore({"alpha": [2.0, 0.0], "beta": [0.0, 5.0]}, {})
        cfg = ScoringConfig(tau_text=1.0, normalize_embeddings=False)
        p = clip_path(EmbeddingVector.wrap([3.0, 0.0]), reg, store, cfg)
        # Raw dot products: 6 and 0.
        assert np.allclose(p, softmax_oracle([6.0, 0.0]), atol=1e-12)

    def test_dim_mismatch_rejected(self):
        reg = make_registry(["alpha"])
        store = FakeStore({"alpha": [1.0, 0.0]}, {})
        with pytest.raises(ScoringError):
            clip_path(EmbeddingVector.wrap([1.0, 0.0, 0.0]), reg, store, ScoringConfig())


class TestDinoPath:
    def test_mean_over_gallery(self):
        reg = make_registry(["alpha", "beta"])
        store = FakeStore(
            {},
            {
                "alpha": [[1.0, 0.0], [0.0, 1.0]],  # cosines 1 and 0 -> mean 0.5
                "beta": [[-1.0, 0.0]],  # cosine -1
            },
        )
        cfg = ScoringConfig(tau_image=1.0)
        p = dino_path(EmbeddingVector.wrap([1.0, 0.0]), reg, store, cfg)
        assert np.allclose(p, softmax_oracle([0.5, -1.0]), atol=1e-12)

    def test_empty_gallery_gets_zero_probability(self):
        reg = make_registry(["alpha", "beta"])
        store = FakeStore({}, {"alpha": [[1.0, 0.0]]})
        p = dino_path(EmbeddingVector.wrap([1.0, 0.0]), reg, store, ScoringConfig())
        assert p[1] == 0.0
        assert p[0] == pytest.approx(1.0, abs=1e-12)

    def test_all_empty_is_an_error(self):
        reg = make_registry(["alpha"])
        store = FakeStore({}, {})
        with pytest.raises(ScoringError, match="empty"):
            dino_path(EmbeddingVector.wrap([1.0, 0.0]), reg, store, ScoringConfig())


def random_prob(rng, n):
    return softmax(rng.uniform(-5, 5, size=n))


class TestFuseAndScore:
    def test_blend_arithmetic(self):
        reg = make_registry(["a", "b"], virtual=["v"])
        p_clip = np.array([0.5, 0.3, 0.2])
        p_dino = np.array([0.1, 0.8, 0.1])
        out = fuse_and_score(p_clip, p_dino, reg, ScoringConfig(alpha=0.6))
        assert np.allclose(out.p_inc, 0.6 * p_clip + 0.4 * p_dino, atol=1e-15)
        # Closed prefix only: the virtual class never wins the prediction.
        assert out.predicted.canonical == "b"
        assert out.score == pytest.approx(0.6 * 0.3 + 0.4 * 0.8, abs=1e-15)

    def test_alpha_one_is_clip_exactly(self):
        reg = make_registry(["a", "b"])
        rng = np.random.default_rng(1)
        for _ in range(50):
            p_clip, p_dino = random_prob(rng, 2), random_prob(rng, 2)
            out = fuse_and_score(p_clip, p_dino, reg, ScoringConfig(alpha=1.0))
            assert np.array_equal(out.p_inc, p_clip)

    def test_alpha_zero_is_dino_exactly(self):
        reg = make_registry(["a", "b"])
        rng = np.random.default_rng(2)
        for _ in range(50):
            p_clip, p_dino = random_prob(rng, 2), random_prob(rng, 2)
            out = fuse_and_score(p_clip, p_dino, reg, ScoringConfig(alpha=0.0))
            assert np.array_equal(out.p_inc, p_dino)

    def test_result_sums_to_one(self):
        rng = np.random.default_rng(3)
        reg = make_registry(["a", "b"], virtual=["v", "w"])
        for _ in range(100):
            out = fuse_and_score(
                random_prob(rng, 4), random_prob(rng, 4), reg, ScoringConfig(alpha=0.37)
            )
            assert abs(out.p_inc.sum() - 1.0) < 1e-9

    def test_fusing_identical_vectors_is_identity(self):
        reg = make_registry(["a", "b"])
        p = np.array([0.25, 0.75])
        out = fuse_and_score(p, p, reg, ScoringConfig(alpha=0.6))
        assert np.allclose(out.p_inc, p, atol=1e-15)

    def test_rejects_unnormalized_and_misshapen_input(self):
        reg = make_registry(["a", "b"])
        good = np.array([0.5, 0.5])
        with pytest.raises(ScoringError):
            fuse_and_score(np.array([0.7, 0.7]), good, reg, ScoringConfig())
        with pytest.raises(ScoringError):
            fuse_and_score(np.array([1.0]), good, reg, ScoringConfig())

    def test_registry_expansion_suppresses_scores(self):
        # Adding any finite-logit class must strictly shrink closed-set mass.
        rng = np.random.default_rng(4)
        for _ in range(200):
            n_closed = int(rng.integers(1, 5))
            n_extra = int(rng.integers(0, 4))
            closed_names = [f"c{i}" for i in range(n_closed)]
            virtual_names = [f"v{i}" for i in range(n_extra)]
            small = make_registry(closed_names, virtual=virtual_names)
            big = make_registry(closed_names, virtual=virtual_names + ["fresh"])
            clip_logits = rng.uniform(-8, 8, size=len(small))
            dino_logits = rng.uniform(-8, 8, size=len(small))
            extra = rng.uniform(-8, 8, size=2)
            s_small = fuse_and_score(
                softmax(clip_logits), softmax(dino_logits), small, ScoringConfig()
            ).score
            s_big = fuse_and_score(
                softmax(np.append(clip_logits, extra[0])),
                softmax(np.append(dino_logits, extra[1])),
                big,
                ScoringConfig(),
            ).score
            assert s_big < s_small

    def test_serialization(self):
        reg = make_registry(["a", "b"])
        out = fuse_and_score(
            np.array([0.6, 0.4]), np.array([0.2, 0.8]), reg, ScoringConfig(alpha=0.5)
        )
        row = out.row("img-1")
        assert set(row) == {"image_id", "S", "predicted_closed_class", "p_inc"}
        detail = out.detail("img-1")
        assert set(detail) == {
            "image_id",
            "S",
            "predicted_closed_class",
            "p_clip",
            "p_dino",
            "p_inc",
        }
        assert row["S"] == out.score


class TestScoreImage:
    def test_composes_both_paths(self):
        reg = make_registry(["alpha", "beta"])
        store = FakeStore(
            {"alpha": [1.0, 0.0], "beta": [0.0, 1.0]},
            {"alpha": [[1.0, 0.0]], "beta": [[0.0, 1.0]]},
        )
        cfg = ScoringConfig(alpha=0.5, tau_text=1.0, tau_image=1.0)
        out = score_image(
            EmbeddingVector.wrap([1.0, 0.0]),
            EmbeddingVector.wrap([1.0, 0.0]),
            reg,
            store,
            cfg,
        )
        expected = np.asarray(softmax_oracle([1.0, 0.0]))
        assert np.allclose(out.p_inc, expected, atol=1e-12)
        assert out.predicted.canonical == "alpha"


class TestScoringConfig:
    def test_validation(self):
        with pytest.raises(ScoringError):
            ScoringConfig(alpha=1.5)
        with pytest.raises(ScoringError):
            ScoringConfig(tau_text=0.0)
