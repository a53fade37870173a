"""Procedural clean images and the weak/strong blur+noise degradations."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionError
from .imagecore import Basis, decode
from .oracle import GMMPrior, sample


@dataclass(frozen=True)
class DegradationSpec:
    kernel_sizes: tuple[int, ...]
    blur_sigma_range: tuple[float, float]
    gauss_noise_range: tuple[float, float]
    poisson_scale_range: tuple[float, float]

    def __post_init__(self):
        for name in ("blur_sigma_range", "gauss_noise_range", "poisson_scale_range"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ValueError(f"{name} must satisfy 0 <= lo <= hi, got {(lo, hi)}")
        if not self.kernel_sizes or any(k < 3 or k % 2 == 0 for k in self.kernel_sizes):
            raise ValueError(f"kernel sizes must be odd and >= 3, got {self.kernel_sizes}")

    def to_dict(self):
        return {k: list(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(int(k) for k in d["kernel_sizes"]), tuple(d["blur_sigma_range"]),
                   tuple(d["gauss_noise_range"]), tuple(d["poisson_scale_range"]))


# Blur sigma ranges are not tabulated in the source setting; they are tied to
# kernel size as roughly size/6.
def preset_weak() -> DegradationSpec:
    return DegradationSpec((7, 9, 11), (0.8, 1.6), (1 / 255, 20 / 255), (0.05, 2.0))


def preset_strong() -> DegradationSpec:
    return DegradationSpec((17, 19, 21), (2.4, 3.6), (20 / 255, 30 / 255), (0.15, 3.0))


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    if size < 3 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd and >= 3, got {size}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    r = np.arange(size) - size // 2
    # exponent shifted by its max (0 at centre) so tiny sigma stays finite
    k = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def convolve(img, kernel) -> np.ndarray:
    """Same-size 2-D correlation with mirror padding (edge sample not repeated)."""
    img = np.asarray(img, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
        raise ValueError("kernel sides must be odd")
    if kernel.shape[0] > img.shape[0] or kernel.shape[1] > img.shape[1]:
        raise DimensionError(f"kernel {kernel.shape} larger than image {img.shape}")
    return ndimage.correlate(img, kernel, mode="mirror")


def degrade(img, spec: DegradationSpec, rng, return_draws=False):
    """Blur, add Gaussian noise, then signal-dependent shot noise.

    Draw order is fixed (kernel size, blur sigma, noise sigma, shot scale,
    Gaussian field, shot field) so a seed fully determines the output.
    """
    img = np.asarray(img, dtype=np.float64)
    size = int(rng.choice(spec.kernel_sizes))
    sigma = float(rng.uniform(*spec.blur_sigma_range))
    noise = float(rng.uniform(*spec.gauss_noise_range))
    scale = float(rng.uniform(*spec.poisson_scale_range))
    g = rng.standard_normal(img.shape)
    s = rng.standard_normal(img.shape)
    out = convolve(img, gaussian_kernel(size, sigma))
    out = out + noise * g
    out = out + scale * np.sqrt(np.maximum(out, 0.0) / 255.0) * s
    if return_draws:
        return out, {"kernel_size": size, "blur_sigma": sigma, "gauss_sigma": noise, "poisson_scale": scale}
    return out


def degrade_set(images, spec, rng):
    """Degrade every image independently; returns (stack, list of per-image draws)."""
    outs, draws = [], []
    for img in images:
        o, d = degrade(img, spec, rng, return_draws=True)
        outs.append(o)
        draws.append(d)
    return np.array(outs).reshape(np.shape(images)), draws


# -- clean images ---------------------------------------------------------------

def generator_prior(basis: Basis, n_components=8, rng=None, decay=1.0, spread=0.6) -> GMMPrior:
    """Random 1/f-like mixture used as the ground-truth clean-image source.

    Component means are drawn with per-frequency scale ``(1 + |f|)^-decay``;
    within-component std is ``spread`` times that scale.
    """
    rng = np.random.default_rng() if rng is None else rng
    radius = np.array([np.hypot(u, v) for u, v in basis.freqs])
    scale = (1.0 + radius) ** -decay
    means = rng.standard_normal((n_components, basis.d)) * scale
    variances = np.broadcast_to((spread * scale) ** 2, means.shape).copy()
    weights = rng.dirichlet(np.full(n_components, 4.0))
    idx = tuple(range(n_components))
    return GMMPrior(weights, means, variances, {"null": idx, "clean": idx})


def clean_affine(prior: GMMPrior, basis: Basis, n_std=4.0) -> tuple[float, float]:
    """Affine map sending the clean mixture's per-pixel mean +- ``n_std`` std into [0.1, 0.9]."""
    w = prior.weights[:, None]
    pix_mean = (w * prior.means).sum(0) @ basis.rows
    # per-pixel second moment of the mixture, diagonal covariances in latent space
    second = (w * (prior.means @ basis.rows) ** 2).sum(0) + (w * prior.variances).sum(0) @ basis.rows ** 2
    pix_std = np.sqrt(np.maximum(second - pix_mean ** 2, 0.0))
    lo = float(np.min(pix_mean - n_std * pix_std))
    hi = float(np.max(pix_mean + n_std * pix_std))
    a = 0.8 / (hi - lo)
    return a, 0.1 - a * lo


def make_clean_set(prior: GMMPrior, basis: Basis, n: int, rng, affine=None):
    """``n`` clean images ``a * decode(z) + b`` with ``z`` from the clean condition.

    Returns ``(stack of shape (n, H, W), (a, b))``.
    """
    if prior.d != basis.d:
        raise DimensionError(f"prior d={prior.d} but basis d={basis.d}")
    a, b = clean_affine(prior, basis) if affine is None else affine
    if n == 0:
        return np.empty((0,) + basis.shape), (a, b)
    z = sample(prior, "clean", rng, n)
    return a * decode(z, basis) + b, (a, b)
