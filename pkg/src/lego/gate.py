"""No-reference quality score from the oracle's clean density, and threshold selection."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .imagecore import Basis, encode
from .oracle import GMMPrior, log_density

TARGET_MEAN = 6.0
TARGET_STD = 1.0


@dataclass(frozen=True)
class GateConfig:
    alpha: float = 4.2
    a: float = 1.0
    b: float = 0.0
    sharpness_weight: float = 0.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("calibration slope must be positive")
        if not np.isfinite(self.alpha):
            raise ValueError("alpha must be finite")


@dataclass(frozen=True)
class GateStats:
    alpha: float
    total: int
    passed: int

    @property
    def pass_rate(self) -> float:
        return self.passed / self.total if self.total else 0.0

    def to_dict(self):
        return {**asdict(self), "pass_rate": self.pass_rate}


def raw_scores(prior: GMMPrior, basis: Basis, images):
    """Clean-condition data-space log density of each image's latent."""
    return log_density(prior, encode(images, basis), "clean", 0.0)


def calibrate(prior: GMMPrior, basis: Basis, clean_images) -> tuple[float, float]:
    """Affine (a, b) standardising clean-set raw scores to mean 6, std 1."""
    if len(clean_images) < 32:
        raise ValueError(f"calibration needs >= 32 clean images, got {len(clean_images)}")
    raw = raw_scores(prior, basis, clean_images)
    std = float(np.std(raw))
    if not std > 0:
        raise ValueError("clean raw scores have zero variance; cannot calibrate")
    a = TARGET_STD / std
    return a, TARGET_MEAN - a * float(np.mean(raw))


def mean_gradient(images):
    x = np.asarray(images, dtype=np.float64)
    gy = np.diff(x, axis=-2)[..., :, :-1]
    gx = np.diff(x, axis=-1)[..., :-1, :]
    return np.mean(np.hypot(gx, gy), axis=(-2, -1))


def quality_score(prior: GMMPrior, basis: Basis, images, cfg: GateConfig):
    """Calibrated score; non-finite images score ``-inf``."""
    x = np.asarray(images, dtype=np.float64)
    finite = np.all(np.isfinite(x), axis=(-2, -1))
    safe = np.where(finite[..., None, None], x, 0.0)
    s = cfg.a * raw_scores(prior, basis, safe) + cfg.b
    if cfg.sharpness_weight:
        s = s + cfg.sharpness_weight * mean_gradient(safe)
    return np.where(finite, s, -np.inf)


def threshold(scores, alpha):
    """Indices of scores at or above ``alpha`` plus the stats record."""
    scores = np.asarray(scores, dtype=np.float64)
    keep = np.flatnonzero(scores >= alpha)
    return keep, GateStats(float(alpha), int(scores.size), int(keep.size))


def select(inputs, candidates, prior: GMMPrior, basis: Basis, cfg: GateConfig):
    """Keep ``(y_i, xhat_i)`` with score(xhat_i) >= alpha.

    Returns ``(kept indices, scores, GateStats)``.
    """
    if len(candidates) == 0:
        raise ValueError("no candidates to select from")
    if len(inputs) != len(candidates):
        raise ValueError("inputs and candidates are not aligned")
    scores = quality_score(prior, basis, candidates, cfg)
    keep, stats = threshold(scores, cfg.alpha)
    return keep, scores, stats


def write_report(path, cfg: GateConfig, scores, keep, stats: GateStats, extra=None):
    flags = np.zeros(len(scores), dtype=bool)
    flags[keep] = True
    report = {
        "alpha": cfg.alpha,
        "calibration": {"a": cfg.a, "b": cfg.b},
        "sharpness_weight": cfg.sharpness_weight,
        "scores": [float(s) if np.isfinite(s) else None for s in scores],
        "passed": flags.tolist(),
        "stats": stats.to_dict(),
    }
    if extra:
        report.update(extra)
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report
