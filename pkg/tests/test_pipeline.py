import numpy as np
import pytest

from foi.backends import ToyBackend
from foi.errors import FoiError
from foi.imgio import encode_png, load_rgb
from foi.masks import ExtractionParams
from foi.pipeline import EditRequest, edit, parse_sub_flag

TWO_SUBS = (("add a hat.", "hat", 1.0), ("make it sunset.", "sunset", 1.0))


@pytest.fixture(scope="module")
def backend():
    return ToyBackend()


def small_request(test_image, **overrides):
    base = dict(
        instruction="add a hat. make it sunset.",
        subs=TWO_SUBS,
        image=test_image,
        steps=20,
        seed=7,
    )
    base.update(overrides)
    return EditRequest(**base)


class TestParseSubFlag:
    def test_two_parts(self):
        assert parse_sub_flag("add a hat.::hat") == ("add a hat.", "hat", 1.0)

    def test_three_parts(self):
        assert parse_sub_flag("make it sunset.::sunset::2.5") == (
            "make it sunset.", "sunset", 2.5,
        )

    @pytest.mark.parametrize("bad", ["no separator", "a::b::c::d", "a::b::x", "a::b::-1"])
    def test_malformed(self, bad):
        with pytest.raises(ValueError):
            parse_sub_flag(bad)


class TestEdit:
    def test_result_contract(self, test_image, backend):
        result = edit(small_request(test_image), backend=backend)
        assert result.output_image.shape == test_image.shape
        assert result.output_image.dtype == np.uint8
        assert len(result.keyword_masks) == 2
        assert result.union_mask is not None
        assert len(result.steps) == 16  # round(20 * 0.8)
        assert result.duration_s > 0
        assert result.original_size == (128, 128)
        assert result.native_size == (128, 128)
        assert result.instruction.resolved
        assert result.step0_attention is not None

    def test_deterministic(self, test_image, backend):
        a = edit(small_request(test_image), backend=backend)
        b = edit(small_request(test_image), backend=backend)
        assert np.array_equal(a.output_image, b.output_image)
        assert encode_png(a.output_image) == encode_png(b.output_image)
        for mask_a, mask_b in zip(a.keyword_masks, b.keyword_masks):
            assert np.array_equal(mask_a.values, mask_b.values)

    def test_output_matches_nonnative_input_size(self, backend):
        rng = np.random.default_rng(0)
        image = rng.integers(0, 255, (200, 160, 3), dtype=np.uint8)
        result = edit(
            EditRequest(
                instruction="add a hat.",
                subs=(("add a hat.", "hat", 1.0),),
                image=image,
                steps=10,
            ),
            backend=backend,
        )
        assert result.output_image.shape == (200, 160, 3)
        assert result.original_size == (200, 160)
        assert result.native_size == (128, 128)

    def test_zero_subs(self, test_image, backend):
        result = edit(small_request(test_image, subs=(), instruction="anything"), backend=backend)
        assert result.keyword_masks == []
        assert result.union_mask is None

    def test_writes_output_file(self, test_image, backend, tmp_path):
        out = tmp_path / "out.png"
        edit(small_request(test_image, out_path=str(out)), backend=backend)
        written = load_rgb(str(out))
        assert written.shape == test_image.shape

    def test_dump_artifacts(self, test_image, backend, tmp_path):
        dump = tmp_path / "dump"
        edit(small_request(test_image, dump_dir=str(dump)), backend=backend)
        names = {p.name for p in dump.iterdir()}
        assert "union_mask.png" in names
        assert "mask_0_hat.png" in names
        assert "mask_1_sunset.png" in names
        # step-0 attention from all three branches, both layers, three file kinds
        attn_pngs = [n for n in names if n.startswith("attn_") and n.endswith(".png")]
        assert len(attn_pngs) == 6
        assert len([n for n in names if n.endswith(".json")]) == 6
        assert len([n for n in names if n.endswith(".f32")]) == 12

    def test_requires_an_image(self):
        with pytest.raises(FoiError):
            edit(EditRequest(instruction="x", subs=()))

    def test_tau_seed_derived_from_request_seed(self, test_image, backend):
        """tau unset: same seed gives same masks, different seed may differ."""
        a = edit(small_request(test_image, seed=3), backend=backend)
        b = edit(small_request(test_image, seed=3), backend=backend)
        assert all(
            np.array_equal(x.values, y.values)
            for x, y in zip(a.keyword_masks, b.keyword_masks)
        )

    def test_explicit_tau_respected(self, test_image, backend):
        result = edit(
            small_request(test_image, extraction=ExtractionParams(tau=0.55)),
            backend=backend,
        )
        assert len(result.keyword_masks) == 2

    def test_alpha_raises_in_mask_keyword_attention(self, test_image, backend):
        def stat(alpha):
            subs = (("add a hat.", "hat", 1.0), ("make it sunset.", "sunset", alpha))
            result = edit(
                small_request(test_image, subs=subs, steps=10), backend=backend
            )
            mask = result.keyword_masks[1].values.reshape(-1).astype(bool)
            kw = list(result.instruction.keyword_token_indices[1])
            return result.step0_attention[np.ix_(mask, kw)].mean()

        assert stat(2.5) >= stat(1.0) - 1e-12
