import numpy as np
import pytest

from faith.frequency import (
    FrequencyError,
    FrequencyMethod,
    Method,
    Subbands,
    dct2,
    dwt_haar,
    extract_frequency_map,
    fft2_magnitude_highpass,
    idct2,
    idwt_haar,
)


def loop_haar(x):
    c, h, w = x.shape
    out = {k: np.zeros((c, h // 2, w // 2)) for k in ("ll", "lh", "hl", "hh")}
    for ch in range(c):
        for i in range(h // 2):
            for j in range(w // 2):
                a, b = x[ch, 2 * i, 2 * j], x[ch, 2 * i, 2 * j + 1]
                cc, d = x[ch, 2 * i + 1, 2 * j], x[ch, 2 * i + 1, 2 * j + 1]
                out["ll"][ch, i, j] = (a + b + cc + d) / 2
                out["lh"][ch, i, j] = (a + b - cc - d) / 2
                out["hl"][ch, i, j] = (a - b + cc - d) / 2
                out["hh"][ch, i, j] = (a - b - cc + d) / 2
    return out


def dct_matrix(n):
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * i + 1) * k / (2 * n))
    m[0] /= np.sqrt(2.0)
    return m


# ---------------------------------------------------------------- DWT

def test_dwt_constant_has_no_detail():
    b = dwt_haar(np.full((3, 8, 8), 0.7))
    assert np.all(b.hh == 0) and np.all(b.lh == 0) and np.all(b.hl == 0)


def test_dwt_block_formulas():
    b = dwt_haar(np.array([[[1.0, 0.0], [0.0, 1.0]]]))
    assert (b.ll.item(), b.lh.item(), b.hl.item(), b.hh.item()) == (1.0, 0.0, 0.0, 1.0)


def test_dwt_matches_loop_reference():
    x = np.random.default_rng(0).normal(size=(2, 6, 10))
    ref = loop_haar(x)
    b = dwt_haar(x)
    for k in ref:
        assert np.max(np.abs(getattr(b, k) - ref[k])) <= 1e-15


def test_dwt_odd_dims_rejected():
    with pytest.raises(FrequencyError):
        dwt_haar(np.zeros((1, 3, 4)))


def test_idwt_examples():
    z = np.zeros((1, 2, 2))
    assert np.all(idwt_haar(Subbands(z, z, z, z)) == 0)
    one = np.ones((1, 1, 1))
    zero = np.zeros((1, 1, 1))
    assert np.array_equal(idwt_haar(Subbands(one, zero, zero, zero)), np.full((1, 2, 2), 0.5))


def test_idwt_rejects_mismatched_bands():
    with pytest.raises(FrequencyError):
        Subbands(np.zeros((1, 2, 2)), np.zeros((1, 2, 2)), np.zeros((1, 2, 2)), np.zeros((1, 1, 2)))


def test_dwt_roundtrip_and_energy_split():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        h, w = 2 * rng.integers(1, 9, size=2)
        x = rng.normal(size=(int(rng.integers(1, 4)), h, w))
        b = dwt_haar(x)
        assert np.max(np.abs(idwt_haar(b) - x)) <= 1e-9
        energy = sum(np.sum(getattr(b, k) ** 2) for k in ("ll", "lh", "hl", "hh"))
        assert abs(energy - np.sum(x**2)) <= 1e-9 * max(1.0, np.sum(x**2))


def test_dwt_hh_translation_covariance():
    rng = np.random.default_rng(2)
    for _ in range(50):
        x = rng.normal(size=(3, 20, 20))
        shifted = np.roll(x, (2, 2), axis=(1, 2))
        a = extract_frequency_map(x, FrequencyMethod(Method.DWT))
        b = extract_frequency_map(shifted, FrequencyMethod(Method.DWT))
        # interior crop avoids the wrapped border
        assert np.array_equal(b[:, 1:, 1:], a[:, :-1, :-1])


# ---------------------------------------------------------------- DCT

def test_dct_constant_block():
    c = dct2(np.ones((1, 4, 4)))
    assert abs(c[0, 0, 0] - 4.0) <= 1e-12
    c[0, 0, 0] = 0.0
    assert np.max(np.abs(c)) <= 1e-12


def test_dct_matches_cosine_matrix():
    x = np.random.default_rng(3).normal(size=(2, 5, 7))
    ref = np.einsum("ki,cij,lj->ckl", dct_matrix(5), x, dct_matrix(7))
    assert np.max(np.abs(dct2(x) - ref)) <= 1e-12


def test_dct_parseval_and_roundtrip():
    rng = np.random.default_rng(4)
    for _ in range(100):
        x = rng.normal(size=(3, int(rng.integers(2, 12)), int(rng.integers(2, 12))))
        c = dct2(x)
        assert abs(np.sum(c**2) - np.sum(x**2)) <= 1e-9
        assert np.max(np.abs(idct2(c) - x)) <= 1e-10


# ---------------------------------------------------------------- FFT

def test_fft_highpass_constant_is_zero():
    for r in (0.05, 0.25, 0.9):
        assert np.max(np.abs(fft2_magnitude_highpass(np.full((3, 16, 16), 0.37), r))) <= 1e-10


def test_fft_highpass_keeps_nyquist_checker():
    yy, xx = np.mgrid[0:16, 0:16]
    chk = np.where((yy + xx) % 2 == 0, 1.0, -1.0)[None]
    assert np.max(np.abs(fft2_magnitude_highpass(chk, 0.5) - chk)) <= 1e-9


def test_fft_highpass_never_adds_energy():
    rng = np.random.default_rng(5)
    for _ in range(50):
        x = rng.normal(size=(2, 12, 10))
        assert np.sum(fft2_magnitude_highpass(x, rng.uniform(0.01, 0.99)) ** 2) <= np.sum(x**2) + 1e-9


def test_fft_radius_validated():
    for r in (0.0, 1.0, -0.2):
        with pytest.raises(FrequencyError):
            fft2_magnitude_highpass(np.zeros((1, 4, 4)), r)
    with pytest.raises(FrequencyError):
        FrequencyMethod(Method.FFT, fft_radius=1.5)


# ---------------------------------------------------------------- extract_frequency_map

@pytest.mark.parametrize("kind,side", [(Method.DWT, 32), (Method.DCT, 64), (Method.FFT, 64)])
def test_map_shapes(kind, side):
    out = extract_frequency_map(np.random.default_rng(6).random((3, 64, 64)), FrequencyMethod(kind))
    assert out.shape == (3, side, side)


@pytest.mark.parametrize("kind", list(Method))
def test_constant_image_maps_to_zero(kind):
    out = extract_frequency_map(np.full((3, 32, 32), 0.42), FrequencyMethod(kind))
    assert np.max(np.abs(out)) <= 1e-9


def test_single_pixel_touches_one_block():
    x = np.zeros((1, 16, 16))
    x[0, 7, 10] = 1.0
    hh = extract_frequency_map(x, FrequencyMethod(Method.DWT))
    nz = np.argwhere(hh != 0)
    assert nz.tolist() == [[0, 3, 5]]


def test_dct_block_validation():
    with pytest.raises(FrequencyError):
        extract_frequency_map(np.zeros((1, 8, 8)), FrequencyMethod(Method.DCT, dct_block=8))
    assert FrequencyMethod(Method.DCT).block_for(64, 64) == 8
