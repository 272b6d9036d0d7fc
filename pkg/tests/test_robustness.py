import numpy as np
import pytest
from scipy import ndimage

from faith.metrics import evaluate
from faith.robustness import (
    CHROMA_TABLE,
    LUMA_TABLE,
    TABLE3,
    Kind,
    Perturbation,
    PerturbationError,
    gaussian_noise,
    jpeg_like_compress,
    psnr,
    robustness_sweep,
    scaled_table,
)


def natural_images(n, seed=0, size=64):
    """Smooth random fields: a 1/f-ish stand-in for natural image statistics."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        x = ndimage.gaussian_filter(rng.random((3, size, size)), (0, 2, 2))
        x += 0.02 * rng.normal(size=x.shape)
        out.append((x - x.min()) / (x.max() - x.min()))
    return out


def test_near_lossless_setting_is_high_psnr():
    for x in natural_images(10):
        assert psnr(x, jpeg_like_compress(x, 1e-6)) > 45.0


def test_psnr_non_increasing_with_ratio():
    for x in natural_images(20, seed=1):
        values = [psnr(x, jpeg_like_compress(x, r)) for r in (25, 50, 75)]
        assert values[0] >= values[1] >= values[2]


def test_mid_gray_within_one_step():
    g = np.full((3, 32, 32), 0.5)
    for r in (25, 50, 75):
        # a DC-only block moves by at most half a DC step, spread over 8x8 pixels
        step = scaled_table(LUMA_TABLE, 100 - r)[0, 0] / 8 / 255
        assert np.max(np.abs(jpeg_like_compress(g, r) - g)) <= step


def test_idempotent_within_one_step():
    for x in natural_images(5, seed=2):
        for r in (25, 50, 75):
            once = jpeg_like_compress(x, r)
            twice = jpeg_like_compress(once, r)
            step = scaled_table(CHROMA_TABLE, 100 - r).max() / 255
            assert np.max(np.abs(twice - once)) <= step


def test_scaled_table_formula():
    assert np.array_equal(scaled_table(LUMA_TABLE, 50), LUMA_TABLE)
    assert np.all(scaled_table(LUMA_TABLE, 100) == 1.0)
    assert scaled_table(LUMA_TABLE, 25)[0, 0] == np.floor((16 * 200 + 50) / 100)
    assert scaled_table(LUMA_TABLE, 1).max() == 255.0


def test_jpeg_input_validation():
    with pytest.raises(PerturbationError, match="multiple of 8"):
        jpeg_like_compress(np.zeros((3, 12, 16)), 50)
    for r in (0, 100, -5):
        with pytest.raises(PerturbationError):
            jpeg_like_compress(np.zeros((3, 8, 8)), r)


def test_noise_std_and_determinism():
    g = np.full((3, 256, 256), 0.5)
    out = gaussian_noise(g, 10, seed=4)
    assert abs(np.std(out - g) - 0.100) <= 0.005
    assert np.array_equal(out, gaussian_noise(g, 10, seed=4))
    assert not np.array_equal(out, gaussian_noise(g, 10, seed=5))
    tiny = gaussian_noise(g, 1e-9, seed=4)
    assert np.max(np.abs(tiny - g)) < 1e-8
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_perturbation_descriptors_and_parse():
    assert [p.descriptor for p in TABLE3] == ["jpeg25", "jpeg50", "jpeg75", "noise10", "noise15", "noise20"]
    assert Perturbation.parse("jpeg:75") == Perturbation(Kind.JPEG, 75)
    assert Perturbation.parse("clean").descriptor == "clean"
    with pytest.raises(PerturbationError):
        Perturbation.parse("blur:3")
    with pytest.raises(PerturbationError):
        Perturbation(Kind.NOISE, 0)


def _samples(n=12):
    return [(x, ["hat"] if i % 2 else []) for i, x in enumerate(natural_images(n, seed=3))]


def _brightness_predictor(batch):
    return [["hat"] if b.mean() > 0.5 else [] for b in batch]


def test_sweep_contract():
    samples = _samples()
    assert robustness_sweep(_brightness_predictor, samples, []) == []
    clean = evaluate(_brightness_predictor, samples)
    ident = robustness_sweep(_brightness_predictor, samples, [Perturbation(Kind.IDENTITY)])[0]
    assert ident.to_json() == clean.to_json()
    reps = robustness_sweep(_brightness_predictor, samples, list(TABLE3))
    assert [r.label for r in reps] == [p.descriptor for p in TABLE3]


def test_sweep_noise_is_seeded_per_sample():
    seen = []

    def spy(batch):
        seen.append(batch.copy())
        return [[] for _ in batch]

    samples = [(np.full((3, 8, 8), 0.5), [])] * 3
    robustness_sweep(spy, samples, [Perturbation(Kind.NOISE, 10, seed=1)])
    imgs = seen[0]
    assert not np.array_equal(imgs[0], imgs[1])
    seen.clear()
    robustness_sweep(spy, samples, [Perturbation(Kind.NOISE, 10, seed=1)])
    assert np.array_equal(seen[0], imgs)


def test_empty_split_rejected():
    with pytest.raises(PerturbationError):
        robustness_sweep(_brightness_predictor, [], list(TABLE3))
