"""Analytic generative oracle: a diagonal Gaussian mixture over latent
coefficients with its exact rectified-flow marginal velocity.

Time convention: ``x_tau = (1 - tau) * x0 + tau * eps`` with ``eps ~ N(0, I)``,
so ``tau = 0`` is data and ``tau = 1`` is pure noise.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateClusterError, DimensionError, FormatError
from .imagecore import load_array, save_array

VAR_FLOOR = 1e-6
TAU_MIN = 1e-3
CONDITIONS = ("null", "clean", "degraded")
LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GMMPrior:
    weights: np.ndarray            # (K,)
    means: np.ndarray              # (K, d)
    variances: np.ndarray          # (K, d)
    condition_map: dict = field(default_factory=dict)
    var_floor: float = VAR_FLOOR

    def __post_init__(self):
        k, d = self.means.shape
        if self.weights.shape != (k,) or self.variances.shape != (k, d):
            raise DimensionError("weights/means/variances disagree on K or d")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"mixture weights sum to {self.weights.sum()}, not 1")
        if np.any(self.variances < self.var_floor * (1 - 1e-12)):
            raise ValueError("variance below floor")
        if "null" not in self.condition_map:
            raise ValueError("condition_map must define the null condition")
        if sorted(self.condition_map["null"]) != list(range(k)):
            raise ValueError("null condition must select every component")
        for label, idx in self.condition_map.items():
            if len(idx) == 0:
                raise ValueError(f"condition {label!r} selects no components")

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def subset(self, cond):
        """Component indices and renormalized log-weights for a condition."""
        if cond not in self.condition_map:
            raise KeyError(f"unknown condition {cond!r}; have {sorted(self.condition_map)}")
        idx = np.asarray(self.condition_map[cond], dtype=int)
        w = self.weights[idx]
        return idx, np.log(w / w.sum())

    def mixture_mean(self, cond="null"):
        idx, logw = self.subset(cond)
        return np.exp(logw) @ self.means[idx]


def _check_latent(prior, z):
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != prior.d:
        raise DimensionError(f"latent length {z.shape[-1]} does not match prior d={prior.d}")
    return z


def _log_joint(prior, z, cond, tau):
    """Per-component ``log pi_k + log N(z; (1-tau) mu_k, A_k)``; shape (..., K_cond)."""
    idx, logw = prior.subset(cond)
    a = (1 - tau) ** 2 * prior.variances[idx] + tau ** 2
    diff = z[..., None, :] - (1 - tau) * prior.means[idx]
    quad = np.sum(diff * diff / a, axis=-1)
    logdet = np.sum(np.log(a), axis=-1)
    return logw - 0.5 * (quad + logdet + prior.d * LOG_2PI), idx, a, diff


def log_density(prior: GMMPrior, z, cond="null", tau=0.0):
    """Log marginal density of ``x_tau`` at ``z`` under the condition's sub-mixture."""
    z = _check_latent(prior, z)
    lj, *_ = _log_joint(prior, z, cond, tau)
    return logsumexp(lj, axis=-1)


def responsibilities(prior: GMMPrior, z, tau, cond="null"):
    z = _check_latent(prior, z)
    lj, *_ = _log_joint(prior, z, cond, tau)
    return np.exp(lj - logsumexp(lj, axis=-1, keepdims=True))


def posterior_mean(prior: GMMPrior, z, tau, cond="null"):
    """``E[x0 | x_tau = z]`` restricted to the condition's components."""
    z = _check_latent(prior, z)
    lj, idx, a, diff = _log_joint(prior, z, cond, tau)
    r = np.exp(lj - logsumexp(lj, axis=-1, keepdims=True))
    comp = prior.means[idx] + (1 - tau) * prior.variances[idx] / a * diff
    return np.einsum("...k,...kd->...d", r, comp)


def velocity(prior: GMMPrior, z, tau, cond="null", tau_min=TAU_MIN):
    """Exact marginal velocity ``(z - E[x0 | z]) / tau``."""
    if tau < tau_min or tau > 1.0:
        raise ValueError(f"tau={tau} outside [{tau_min}, 1]")
    z = _check_latent(prior, z)
    return (z - posterior_mean(prior, z, tau, cond)) / tau


def sample(prior: GMMPrior, cond, rng, n=None):
    """Draw ``n`` latents (or one if ``n`` is None) from the condition's sub-mixture."""
    idx, logw = prior.subset(cond)
    m = 1 if n is None else n
    comp = idx[rng.choice(len(idx), size=m, p=np.exp(logw))]
    eps = rng.standard_normal((m, prior.d))
    z = prior.means[comp] + np.sqrt(prior.variances[comp]) * eps
    return z[0] if n is None else z


# -- fitting --------------------------------------------------------------------

def _kmeans_pp(x, k, rng):
    centers = [x[rng.integers(len(x))]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        i = rng.choice(len(x), p=d2 / total) if total > 0 else rng.integers(len(x))
        centers.append(x[i])
        d2 = np.minimum(d2, np.sum((x - x[i]) ** 2, axis=1))
    return np.array(centers)


def _m_step(x, resp, var_floor):
    nk = resp.sum(axis=0)
    means = (resp.T @ x) / nk[:, None]
    sq = (resp.T @ (x * x)) / nk[:, None] - means ** 2
    return nk / len(x), means, np.maximum(sq, var_floor), nk


def _e_step(x, weights, means, variances):
    diff = x[:, None, :] - means
    lj = np.log(weights) - 0.5 * (np.sum(diff * diff / variances + np.log(variances), axis=-1)
                                  + x.shape[1] * LOG_2PI)
    norm = logsumexp(lj, axis=1)
    return np.exp(lj - norm[:, None]), float(norm.mean())


@dataclass
class FitResult:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    loglik: list
    n_iter: int
    reseeded: int = 0


def fit_gmm(latents, k, max_iters=200, tol=1e-6, rng=None, var_floor=VAR_FLOOR) -> FitResult:
    """Diagonal-covariance EM with k-means++ initialisation.

    ``loglik`` holds the mean per-sample log-likelihood after every E-step; it
    is non-decreasing unless a component had to be reseeded.
    """
    x = np.asarray(latents, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("need a nonempty (n, d) array of latents")
    if not 1 <= k <= len(x):
        raise ValueError(f"K={k} must be in [1, {len(x)}]")
    rng = np.random.default_rng() if rng is None else rng

    centers = _kmeans_pp(x, k, rng)
    hard = np.argmin(((x[:, None, :] - centers) ** 2).sum(-1), axis=1)
    resp = np.eye(k)[hard]
    # empty hard clusters get a uniform sliver so the first M-step is defined
    resp = resp + 1e-12
    resp /= resp.sum(axis=1, keepdims=True)
    weights, means, variances, _ = _m_step(x, resp, var_floor)

    history, reseeded, it = [], 0, 0
    for it in range(1, max_iters + 1):
        resp, ll = _e_step(x, weights, means, variances)
        history.append(ll)
        if len(history) > 1 and history[-1] - history[-2] < tol:
            break
        weights, means, variances, nk = _m_step(x, resp, var_floor)
        dead = np.flatnonzero(nk < 1e-8)
        if dead.size:
            if reseeded:
                raise DegenerateClusterError(f"components {dead.tolist()} collapsed twice")
            reseeded += 1
            # restart dead components on the worst-explained points
            diff = x[:, None, :] - means[None]
            score = logsumexp(-0.5 * np.sum(diff * diff / variances, axis=-1), axis=1)
            worst = np.argsort(score)[:dead.size]
            means[dead] = x[worst]
            variances[dead] = np.maximum(x.var(axis=0), var_floor)
            weights[dead] = 1.0 / len(x)
            weights /= weights.sum()
    return FitResult(weights, means, variances, history, it, reseeded)


def build_oracle(clean_latents, degraded_latents, k_per_class=8, rng=None,
                 max_iters=200, tol=1e-6, var_floor=VAR_FLOOR) -> GMMPrior:
    """Fit class-conditional mixtures and join them with equal class weight."""
    if len(clean_latents) == 0 or len(degraded_latents) == 0:
        raise ValueError("both latent sets must be nonempty")
    rng = np.random.default_rng() if rng is None else rng
    fc = fit_gmm(clean_latents, k_per_class, max_iters, tol, rng, var_floor)
    fd = fit_gmm(degraded_latents, k_per_class, max_iters, tol, rng, var_floor)
    weights = np.concatenate([fc.weights, fd.weights]) * 0.5
    weights /= weights.sum()
    k = k_per_class
    cmap = {"null": tuple(range(2 * k)), "clean": tuple(range(k)), "degraded": tuple(range(k, 2 * k))}
    return GMMPrior(weights, np.vstack([fc.means, fd.means]),
                    np.vstack([fc.variances, fd.variances]), cmap, var_floor)


# -- checkpoint -----------------------------------------------------------------

def save_prior(directory, prior: GMMPrior, seed=None, extra=None) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    save_array(out / "weights.lgt", prior.weights)
    save_array(out / "means.lgt", prior.means)
    save_array(out / "variances.lgt", prior.variances)
    header = {
        "d": prior.d,
        "K": prior.n_components,
        "condition_map": {k: list(v) for k, v in prior.condition_map.items()},
        "var_floor": prior.var_floor,
        "seed": seed,
        "blocks": {"weights": "weights.lgt", "means": "means.lgt", "variances": "variances.lgt"},
    }
    if extra:
        header.update(extra)
    (out / "oracle.json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")


def load_prior(directory) -> GMMPrior:
    src = Path(directory)
    header = json.loads((src / "oracle.json").read_text())
    blocks = header["blocks"]
    weights = load_array(src / blocks["weights"])
    means = load_array(src / blocks["means"])
    variances = load_array(src / blocks["variances"])
    if means.shape != (header["K"], header["d"]):
        raise FormatError(f"{src}: means block shape {means.shape} disagrees with header")
    floor = header["var_floor"]
    return GMMPrior(weights / weights.sum(), means, np.maximum(variances, floor),
                    {k: tuple(v) for k, v in header["condition_map"].items()}, floor)
