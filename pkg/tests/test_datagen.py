import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linvid import io
from linvid.datagen import (
    BumpSpec,
    IngestError,
    SpriteSceneSpec,
    TransformSpec,
    apply_skip,
    build_dataset,
    bump_triplets,
    gen_bump_line,
    gen_rigid_triplets,
    gen_rotating_sprites,
    gen_skip_sprites,
    ingest_frames,
    load_dataset,
    render_sprite,
    save_dataset,
    texture_stills,
)
from linvid.model import curvature_penalty
from linvid.tensor import Tensor


class TestBump:
    def test_narrow_bump_is_one_hot(self):
        f = gen_bump_line(3, sigma=0.05, speed=1.0, n_frames=1, c0=1.0)
        np.testing.assert_allclose(f.ravel(), [0, 1, 0], atol=1e-12)

    def test_centred_bump_is_palindrome(self):
        f = gen_bump_line(7, sigma=1.3, speed=1.0, n_frames=1, c0=3.0).ravel()
        np.testing.assert_array_equal(f, f[::-1])

    def test_curvature_matches_direct_computation(self):
        x = gen_bump_line(3, sigma=0.5, speed=0.1, n_frames=20).reshape(20, 3)
        direct = []
        for t in range(1, 19):
            d1, d2 = x[t] - x[t - 1], x[t + 1] - x[t]
            direct.append(d1 @ d2 / (np.linalg.norm(d1) * np.linalg.norm(d2)))
        got = curvature_penalty(Tensor(x[:-2]), Tensor(x[1:-1]), Tensor(x[2:])).data
        np.testing.assert_allclose(got, direct, atol=1e-12)
        assert np.mean(direct) < 1.0

    @pytest.mark.parametrize("kw", [dict(sigma=0.0), dict(speed=0.0), dict(n_pixels=2)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            gen_bump_line(**kw)

    def test_triplets_in_range_and_reproducible(self):
        a = bump_triplets(BumpSpec(), 5, seed=3)
        b = bump_triplets(BumpSpec(), 5, seed=3)
        assert a.frames.tobytes() == b.frames.tobytes()
        assert a.frames.min() >= 0 and a.frames.max() <= 1


class TestRigid:
    stills = texture_stills(2, 40, seed=0)

    def test_identity_range(self):
        d = gen_rigid_triplets(self.stills, TransformSpec(0, 0, 1.0), 4, seed=0)
        for f in d.frames:
            np.testing.assert_array_equal(f[0], f[1])
            np.testing.assert_array_equal(f[1], f[2])

    def test_pure_translation_shifts_pixels(self):
        spec = TransformSpec(translation=3.0, rotation=0.0, scale=1.0, interpolation="nearest", fixed=True)
        d = gen_rigid_triplets(self.stills, spec, 6, seed=2)
        for f in d.frames[:, :, 0]:
            np.testing.assert_array_equal(f[1][:, 1:], f[0][:, :-1])
            np.testing.assert_array_equal(f[2][:, 2:], f[0][:, :-2])

    def test_reproducible(self):
        a = gen_rigid_triplets(self.stills, TransformSpec(), 5, seed=9)
        b = gen_rigid_triplets(self.stills, TransformSpec(), 5, seed=9)
        assert a.frames.tobytes() == b.frames.tobytes()

    def test_latents_are_linear_in_tau(self):
        d = gen_rigid_triplets(self.stills, TransformSpec(), 5, seed=1)
        for lat in d.latents:
            params = lat[:, 1:] / lat[:, :1]
            np.testing.assert_allclose(params, params[:1].repeat(3, axis=0), rtol=1e-12, atol=1e-12)

    def test_window_too_large(self):
        with pytest.raises(ValueError):
            gen_rigid_triplets(self.stills, TransformSpec(window=64), 1, seed=0)


class TestSprites:
    def test_zero_step(self):
        d = gen_rotating_sprites(SpriteSceneSpec(step=0.0), 3, seed=0)
        for f in d.frames:
            np.testing.assert_array_equal(f[0], f[1])
            np.testing.assert_array_equal(f[0], f[2])

    @given(st.floats(0, 360), st.floats(0, 360))
    @settings(max_examples=30, deadline=None)
    def test_periodic(self, az, pitch):
        spec = SpriteSceneSpec()
        np.testing.assert_allclose(render_sprite(spec, az, pitch), render_sprite(spec, az + 360, pitch + 360), atol=1e-9)

    def test_mass_constant(self):
        spec = SpriteSceneSpec()
        rng = np.random.default_rng(0)
        masses = [render_sprite(spec, *rng.uniform(0, 360, 2)).sum() for _ in range(200)]
        assert (max(masses) - min(masses)) / np.mean(masses) < 0.02

    def test_constant_speed_latents(self):
        d = gen_rotating_sprites(SpriteSceneSpec(step=20), 20, seed=4)
        steps = np.diff(d.latents, axis=1)
        np.testing.assert_allclose(steps[:, 0], steps[:, 1], atol=1e-9)
        np.testing.assert_allclose(np.linalg.norm(steps, axis=-1), 20.0, atol=1e-9)

    def test_fixed_heading(self):
        d = gen_rotating_sprites(SpriteSceneSpec(step=20, heading=0.0), 5, seed=4)
        np.testing.assert_allclose(np.diff(d.latents, axis=1)[..., 0], 20.0, atol=1e-9)
        np.testing.assert_allclose(np.diff(d.latents, axis=1)[..., 1], 0.0, atol=1e-9)

    def test_step_bound(self):
        with pytest.raises(ValueError, match="step"):
            SpriteSceneSpec(step=45)

    def test_range(self):
        d = gen_rotating_sprites(SpriteSceneSpec(), 10, seed=0)
        assert d.frames.min() >= 0 and d.frames.max() <= 1


class TestSkip:
    seq = np.arange(4.0).reshape(4, 1, 1, 1)

    def test_never(self):
        t = apply_skip(self.seq, 0.0, seed=1)
        assert t.s == 0 and t.frames.ravel().tolist() == [0, 1, 2]

    def test_always(self):
        t = apply_skip(self.seq, 1.0, seed=1)
        assert t.s == 1 and t.frames.ravel().tolist() == [0, 1, 3]

    def test_short_sequence(self):
        with pytest.raises(ValueError):
            apply_skip(self.seq[:3])

    def test_rate(self):
        s = [apply_skip(self.seq, 0.5, seed=[7, i]).s for i in range(10_000)]
        assert 0.48 <= np.mean(s) <= 0.52

    def test_skip_sprites_carry_labels(self):
        d = gen_skip_sprites(SpriteSceneSpec(step=10), 40, seed=0)
        assert d.s is not None and set(np.unique(d.s)) <= {0, 1}
        skipped = d.latents[d.s == 1]
        np.testing.assert_allclose(skipped[:, 2] - skipped[:, 1], 2 * (skipped[:, 1] - skipped[:, 0]), atol=1e-9)


class TestIngest:
    def _write(self, d, n, shape=(6, 5)):
        rng = np.random.default_rng(0)
        for i in range(n):
            io.write_pgm(d / f"f{i:03d}.pgm", rng.uniform(0, 1, shape))

    def test_three_frames_one_triplet(self, tmp_path):
        self._write(tmp_path, 3)
        assert len(ingest_frames(tmp_path)) == 1

    @pytest.mark.parametrize("n", [4, 7, 12])
    def test_count(self, tmp_path, n):
        self._write(tmp_path, n)
        assert len(ingest_frames(tmp_path)) == n - 2

    def test_mismatched_listed(self, tmp_path):
        self._write(tmp_path, 3)
        io.write_pgm(tmp_path / "f999.pgm", np.zeros((3, 3)))
        (tmp_path / "junk.pgm").write_bytes(b"not an image")
        with pytest.raises(IngestError) as exc:
            ingest_frames(tmp_path)
        assert "f999.pgm" in str(exc.value) and "junk.pgm" in str(exc.value)

    def test_order_is_lexicographic(self, tmp_path):
        for i, v in enumerate([0.2, 0.4, 0.6]):
            io.write_pgm(tmp_path / f"b{i}.pgm", np.full((2, 2), v))
        t = ingest_frames(tmp_path)
        np.testing.assert_allclose(t.frames[0, :, 0, 0, 0], [51 / 255, 102 / 255, 153 / 255])


def test_pgm_roundtrip_is_lossless_at_8_bits(tmp_path):
    q = np.random.default_rng(0).integers(0, 256, size=(9, 7)) / 255.0
    io.write_pgm(tmp_path / "a.pgm", q)
    np.testing.assert_array_equal(io.read_pgm(tmp_path / "a.pgm"), q)


def test_pgm_header_with_comment(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
    np.testing.assert_array_equal(io.read_pgm(tmp_path / "c.pgm"), [[0.0, 1.0]])


def test_dataset_roundtrip(tmp_path):
    d = gen_skip_sprites(SpriteSceneSpec(), 6, seed=2)
    save_dataset(tmp_path, d, previews=1)
    back = load_dataset(tmp_path)
    np.testing.assert_allclose(back.frames, d.frames.astype(np.float32))
    np.testing.assert_array_equal(back.s, d.s)
    assert back.manifest["generator"] == "skip-sprites"
    assert (tmp_path / "triplet0000_2.pgm").exists()


def test_build_dataset_dispatch():
    d = build_dataset({"generator": "sprites", "count": 3, "seed": 1, "spec": {"step": 10}})
    e = gen_rotating_sprites(SpriteSceneSpec(step=10), 3, seed=1)
    assert d.frames.tobytes() == e.frames.tobytes()
    with pytest.raises(ValueError, match="generator"):
        build_dataset({"generator": "movies"})


@pytest.mark.parametrize("blob", [b"", b"P5\n2 2", b"P5\n2 x\n255\n", b"P5\n2 2\n255\n\x00"])
def test_pgm_bad_input_raises_format_error(tmp_path, blob):
    (tmp_path / "bad.pgm").write_bytes(blob)
    with pytest.raises(io.FormatError):
        io.read_pgm(tmp_path / "bad.pgm")
