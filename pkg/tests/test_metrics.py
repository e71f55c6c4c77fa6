import json
import math

import numpy as np
import pytest

from foi.errors import ProviderUnavailable, ZeroDelta, ZeroVector
from foi.imgio import save_png
from foi.metrics import (
    ToyEmbeddingProvider,
    directional_similarity,
    evaluate_manifest,
    evaluate_pair,
    get_provider,
    image_similarity,
    load_pairs_manifest,
    provider_names,
    rows_to_csv,
)


class TestImageSimilarity:
    def test_identical(self):
        v = np.array([0.3, -0.2, 0.9])
        assert image_similarity(v, v) == pytest.approx(1.0)

    def test_opposite(self):
        v = np.array([0.3, -0.2, 0.9])
        assert image_similarity(v, -v) == pytest.approx(-1.0)

    def test_hand_computed(self):
        a = np.array([1.0, 0.0])
        b = np.array([1.0, 1.0]) / math.sqrt(2.0)
        assert image_similarity(a, b) == pytest.approx(0.7071, abs=1e-4)

    def test_zero_vector(self):
        with pytest.raises(ZeroVector):
            image_similarity(np.zeros(3), np.ones(3))

    def test_dim_mismatch(self):
        with pytest.raises(ZeroVector):
            image_similarity(np.ones(3), np.ones(4))

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a, b = rng.standard_normal(8), rng.standard_normal(8)
            s, t = rng.uniform(0.1, 10, 2)
            assert image_similarity(s * a, t * b) == pytest.approx(
                image_similarity(a, b), abs=1e-12
            )


class TestDirectionalSimilarity:
    def test_matching_deltas(self):
        zero = np.zeros(4)
        delta = np.array([0.1, 0.2, 0.3, 0.4])
        assert directional_similarity(zero, delta, zero, delta) == pytest.approx(1.0)

    def test_orthogonal_deltas(self):
        zero = np.zeros(2)
        assert directional_similarity(
            zero, np.array([1.0, 0.0]), zero, np.array([0.0, 1.0])
        ) == pytest.approx(0.0)

    def test_hand_computed(self):
        zero = np.zeros(2)
        out = directional_similarity(
            zero, np.array([1.0, 0.0]), zero, np.array([1.0, 1.0])
        )
        assert out == pytest.approx(0.7071, abs=1e-4)

    def test_zero_delta(self):
        v = np.ones(3)
        with pytest.raises(ZeroDelta):
            directional_similarity(v, v, np.zeros(3), np.ones(3))


class TestToyProvider:
    def test_unit_norm_and_deterministic(self, test_image):
        provider = ToyEmbeddingProvider()
        a = provider.embed_image(test_image)
        b = provider.embed_image(test_image)
        assert np.array_equal(a, b)
        assert np.linalg.norm(a) == pytest.approx(1.0)
        t = provider.embed_text("add a hat")
        assert np.linalg.norm(t) == pytest.approx(1.0)

    def test_empty_text_rejected(self):
        with pytest.raises(ZeroVector):
            ToyEmbeddingProvider().embed_text("   ")

    def test_evaluate_pair_keys(self, test_image):
        provider = ToyEmbeddingProvider()
        edited = 255 - test_image
        scores = evaluate_pair(provider, test_image, edited, "a photo", "a bright photo")
        assert set(scores) == {"image_similarity", "directional_similarity"}
        assert -1.0 <= scores["image_similarity"] <= 1.0


class TestProviderRegistry:
    def test_names(self):
        assert provider_names() == ["clip", "dinov2", "toy"]

    def test_toy_available(self):
        assert get_provider("toy").name == "toy"

    @pytest.mark.parametrize("name", ["clip", "dinov2"])
    def test_asset_backed_unavailable(self, name):
        with pytest.raises(ProviderUnavailable):
            get_provider(name)

    def test_unknown(self):
        with pytest.raises(ProviderUnavailable):
            get_provider("resnet")


class TestManifestEvaluation:
    @pytest.fixture()
    def manifest(self, tmp_path, test_image):
        save_png(str(tmp_path / "src.png"), test_image)
        save_png(str(tmp_path / "edit.png"), 255 - test_image)
        save_png(str(tmp_path / "edit2.png"), test_image[::-1].copy())
        records = [
            {
                "source_image": "src.png",
                "edited_image": "edit.png",
                "source_text": "a photo of a dog",
                "edited_text": "a photo of a dog with a hat",
            },
            {
                "source_image": "src.png",
                "edited_image": "edit2.png",
                "source_text": "a photo",
                "edited_text": "a drawing",
            },
        ]
        path = tmp_path / "pairs.json"
        path.write_text(json.dumps(records))
        return str(path)

    def test_relative_paths_resolved(self, manifest, tmp_path):
        pairs = load_pairs_manifest(manifest)
        assert pairs[0]["source_image"] == str(tmp_path / "src.png")

    def test_rows_and_csv(self, manifest):
        rows = evaluate_manifest(manifest, get_provider("toy"))
        assert len(rows) == 2
        assert all(-1.0 <= r["image_similarity"] <= 1.0 for r in rows)
        text = rows_to_csv(rows)
        lines = text.strip().splitlines()
        assert lines[0] == "source_image,edited_image,image_similarity,directional_similarity"
        assert len(lines) == 3

    def test_identical_pair_has_undefined_direction(self, tmp_path, test_image):
        save_png(str(tmp_path / "same.png"), test_image)
        path = tmp_path / "pairs.json"
        path.write_text(
            json.dumps(
                [
                    {
                        "source_image": "same.png",
                        "edited_image": "same.png",
                        "source_text": "a photo",
                        "edited_text": "a drawing",
                    }
                ]
            )
        )
        with pytest.raises(ZeroDelta):
            evaluate_manifest(str(path), get_provider("toy"))

    def test_bad_manifest_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"not": "a list"}))
        with pytest.raises(ValueError):
            load_pairs_manifest(str(path))

    def test_missing_keys_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps([{"source_image": "x.png"}]))
        with pytest.raises(ValueError):
            load_pairs_manifest(str(path))
