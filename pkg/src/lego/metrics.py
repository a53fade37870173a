"""PSNR, SSIM and a latent-coefficient Frechet distance."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError
from .imagecore import Basis, encode

PSNR_CAP = 100.0
COV_FLOOR = 1e-8


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """Peak-1.0 PSNR in dB, capped at 100 dB for (near-)identical images."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _gauss_window(size=11, sigma=1.5):
    r = np.arange(size) - size // 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return g


def _filter_valid(x, g):
    # separable 'valid' filtering along the last two axes
    n = len(g)
    rows = sum(g[i] * x[..., i:x.shape[-2] - n + 1 + i, :] for i in range(n))
    return sum(g[i] * rows[..., :, i:x.shape[-1] - n + 1 + i] for i in range(n))


def ssim_map(a, b, k1=0.01, k2=0.03, data_range=1.0):
    a, b = _pair(a, b)
    if min(a.shape[-2:]) < 11:
        raise DimensionError(f"SSIM needs images of at least 11x11, got {a.shape[-2:]}")
    g = _gauss_window()
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a ** 2
    sbb = _filter_valid(b * b, g) - mu_b ** 2
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    return ((2 * mu_a * mu_b + c1) * (2 * sab + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2))


def ssim(a, b) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, range 1."""
    return float(ssim_map(a, b).mean())


def sqrtm_psd(c) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition (negative eigenvalues clipped)."""
    c = 0.5 * (c + c.T)
    vals, vecs = np.linalg.eigh(c)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def gaussian_frechet(m1, c1, m2, c2) -> float:
    s1 = sqrtm_psd(c1)
    cross = sqrtm_psd(s1 @ c2 @ s1)
    val = float(np.sum((m1 - m2) ** 2) + np.trace(c1) + np.trace(c2) - 2.0 * np.trace(cross))
    return max(val, 0.0)


def fit_moments(latents):
    x = np.asarray(latents, dtype=np.float64)
    if len(x) == 0:
        raise ValueError("cannot fit moments of an empty set")
    m = x.mean(axis=0)
    c = np.cov(x, rowvar=False, bias=False) if len(x) > 1 else np.zeros((x.shape[1],) * 2)
    return m, np.atleast_2d(c) + COV_FLOOR * np.eye(x.shape[1])


def frechet_distance(set_a, set_b, basis: Basis) -> float:
    """Frechet distance between Gaussians fitted to the two sets' latent coefficients."""
    if len(set_a) == 0 or len(set_b) == 0:
        raise ValueError("Frechet distance needs two nonempty image sets")
    ma, ca = fit_moments(encode(set_a, basis))
    mb, cb = fit_moments(encode(set_b, basis))
    return gaussian_frechet(ma, ca, mb, cb)


@dataclass
class MetricReport:
    psnr: list
    ssim: list
    frechet: float
    count: int
    config: dict = field(default_factory=dict)

    @property
    def psnr_mean(self):
        return float(np.mean(self.psnr))

    @property
    def ssim_mean(self):
        return float(np.mean(self.ssim))

    def summary(self):
        return {
            "count": self.count,
            "psnr_mean": self.psnr_mean, "psnr_std": float(np.std(self.psnr)),
            "ssim_mean": self.ssim_mean, "ssim_std": float(np.std(self.ssim)),
            "frechet": self.frechet,
        }

    def to_dict(self):
        return {**asdict(self), "summary": self.summary()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["psnr"], d["ssim"], d["frechet"], d["count"], d.get("config", {}))

    def write(self, json_path, csv_path=None):
        Path(json_path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        if csv_path is not None:
            with open(csv_path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["row", "psnr", "ssim"])
                for i, (p, s) in enumerate(zip(self.psnr, self.ssim)):
                    w.writerow([i, repr(p), repr(s)])
                s = self.summary()
                w.writerow(["mean", repr(s["psnr_mean"]), repr(s["ssim_mean"])])
                w.writerow(["std", repr(s["psnr_std"]), repr(s["ssim_std"])])
                w.writerow(["frechet", repr(self.frechet), ""])


def evaluate_outputs(restored, clean, basis: Basis, config=None) -> MetricReport:
    restored = np.asarray(restored, dtype=np.float64)
    clean = np.asarray(clean, dtype=np.float64)
    if len(restored) == 0:
        raise ValueError("empty test set")
    return MetricReport(
        [psnr(r, c) for r, c in zip(restored, clean)],
        [ssim(r, c) for r, c in zip(restored, clean)],
        frechet_distance(restored, clean, basis),
        len(restored),
        dict(config or {}),
    )


def evaluate(params, degraded, clean, basis: Basis, config=None) -> MetricReport:
    """Restore every degraded test input and score it against its clean reference."""
    from .restonet import forward
    return evaluate_outputs(forward(params, degraded), clean, basis, config)
