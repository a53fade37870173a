import numpy as np
import pytest

from lego.errors import DimensionError
from lego.imagecore import encode
from lego.oracle import build_oracle, log_density
from lego.synthgen import (
    DegradationSpec, convolve, degrade, degrade_set, gaussian_kernel, generator_prior,
    make_clean_set, preset_strong, preset_weak,
)
from lego.metrics import psnr


def naive_correlate(img, k):
    h, w = img.shape
    r = k.shape[0] // 2

    def mirror(i, n):
        while i < 0 or i >= n:
            i = -i if i < 0 else 2 * (n - 1) - i
        return i

    out = np.zeros_like(img)
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for a in range(k.shape[0]):
                for b in range(k.shape[1]):
                    acc += k[a, b] * img[mirror(i + a - r, h), mirror(j + b - r, w)]
            out[i, j] = acc
    return out


def test_presets_match_table():
    w, s = preset_weak(), preset_strong()
    assert set(w.kernel_sizes) == {7, 9, 11}
    assert set(s.kernel_sizes) == {17, 19, 21}
    assert w.gauss_noise_range == (1 / 255, 20 / 255)
    assert s.gauss_noise_range == (20 / 255, 30 / 255)
    assert w.poisson_scale_range == (0.05, 2.0)
    assert s.poisson_scale_range == (0.15, 3.0)


def test_spec_validation():
    with pytest.raises(ValueError):
        DegradationSpec((4,), (1, 2), (0, 0), (0, 0))
    with pytest.raises(ValueError):
        DegradationSpec((3,), (2, 1), (0, 0), (0, 0))


@pytest.mark.parametrize("size,sigma", [(3, 0.5), (7, 1.2), (21, 3.5), (11, 100.0)])
def test_kernel_normalised(size, sigma):
    assert abs(gaussian_kernel(size, sigma).sum() - 1) < 1e-9


def test_kernel_limits():
    assert gaussian_kernel(3, 1e-3)[1, 1] == pytest.approx(1.0)
    k = gaussian_kernel(3, 1.0)
    assert k[0, 0] / k[1, 1] == pytest.approx(np.exp(-1), rel=1e-12)
    for bad in [(4, 1.0), (1, 1.0), (3, 0.0)]:
        with pytest.raises(ValueError):
            gaussian_kernel(*bad)


def test_convolve_identity_and_constant(rng):
    img = rng.random((16, 16))
    delta = np.zeros((3, 3))
    delta[1, 1] = 1
    np.testing.assert_array_equal(convolve(img, delta), img)
    const = np.full((16, 16), 0.3)
    np.testing.assert_allclose(convolve(const, gaussian_kernel(11, 2.0)), const, atol=1e-15)


def test_convolve_matches_naive(rng):
    img = rng.random((8, 8))
    k = rng.random((3, 3))
    np.testing.assert_allclose(convolve(img, k), naive_correlate(img, k), atol=1e-14)


def test_convolve_large_kernel_matches_naive(rng):
    img = rng.random((24, 24))
    k = gaussian_kernel(21, 3.0)
    np.testing.assert_allclose(convolve(img, k), naive_correlate(img, k), atol=1e-14)


def test_convolve_rejects_big_kernel():
    with pytest.raises(DimensionError):
        convolve(np.zeros((8, 8)), np.ones((9, 9)) / 81)


def test_blur_mean_under_mirror_padding(rng):
    # exact for constant images; for textured images mirror padding reweights
    # border pixels, so the mean moves only by the border correction
    for size in (3, 11, 21):
        k = gaussian_kernel(size, size / 6)
        c = np.full((32, 32), 0.42)
        assert abs(convolve(c, k).mean() - 0.42) < 1e-12
        img = rng.random((32, 32))
        assert abs(convolve(img, k).mean() - img.mean()) < 1e-2


def test_degrade_pure_blur_reproducible(rng):
    spec = DegradationSpec((3,), (1.0, 1.0), (0.0, 0.0), (0.0, 0.0))
    img = rng.random((16, 16))
    a = degrade(img, spec, np.random.default_rng(7))
    b = degrade(img, spec, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(a, convolve(img, gaussian_kernel(3, 1.0)), atol=1e-15)


def test_degrade_deterministic_and_finite(rng):
    img = rng.random((32, 32))
    a, da = degrade(img, preset_strong(), np.random.default_rng(3), return_draws=True)
    b, db = degrade(img, preset_strong(), np.random.default_rng(3), return_draws=True)
    assert a.tobytes() == b.tobytes() and da == db
    assert np.all(np.isfinite(a))
    assert da["kernel_size"] in (17, 19, 21)


@pytest.fixture(scope="module")
def world():
    from lego.imagecore import build_dct_basis
    basis = build_dct_basis(32, 32, 48)
    gp = generator_prior(basis, 8, np.random.default_rng(0))
    clean, aff = make_clean_set(gp, basis, 128, np.random.default_rng(1))
    return basis, gp, clean, aff


def test_clean_set_range_and_determinism(world):
    basis, gp, clean, aff = world
    again, aff2 = make_clean_set(gp, basis, 128, np.random.default_rng(1))
    assert aff == aff2 and again.tobytes() == clean.tobytes()
    assert clean.min() > 0.05 and clean.max() < 0.95
    empty, _ = make_clean_set(gp, basis, 0, np.random.default_rng(1))
    assert empty.shape == (0, 32, 32)


def test_strong_is_worse_than_weak(world):
    _, _, clean, _ = world
    weak, _ = degrade_set(clean[:64], preset_weak(), np.random.default_rng(2))
    strong, _ = degrade_set(clean[:64], preset_strong(), np.random.default_rng(2))
    pw = np.mean([psnr(a, b) for a, b in zip(weak, clean)])
    ps = np.mean([psnr(a, b) for a, b in zip(strong, clean)])
    assert pw - ps >= 2.0


def test_clean_denser_than_degraded(world):
    basis, _, clean, _ = world
    weak, _ = degrade_set(clean, preset_weak(), np.random.default_rng(5))
    prior = build_oracle(encode(clean, basis), encode(weak, basis), 4, np.random.default_rng(6))
    assert log_density(prior, encode(clean, basis), "clean").mean() >= \
        log_density(prior, encode(weak, basis), "clean").mean()
