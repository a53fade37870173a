"""Euler inversion, classifier-free-guided velocity and backward generation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError
from .imagecore import Basis, decode, encode
from .oracle import TAU_MIN, GMMPrior, velocity


@dataclass(frozen=True)
class SolverConfig:
    n_steps: int = 50
    guidance_w: float = 3.5
    tau_min: float = TAU_MIN
    condition: str = "clean"
    blend: float = 1.0   # latent blend with the input; 1.0 disables it

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.guidance_w < 0:
            raise ValueError("guidance_w must be >= 0")
        if not 0 < self.tau_min < 1:
            raise ValueError("tau_min must lie in (0, 1)")
        if not 0 <= self.blend <= 1:
            raise ValueError("blend must lie in [0, 1]")

    @property
    def dtau(self) -> float:
        return (1.0 - self.tau_min) / self.n_steps

    def grid(self) -> np.ndarray:
        """``tau_j = tau_min + j * dtau`` for ``j = 0..N`` (last entry exactly 1)."""
        g = self.tau_min + np.arange(self.n_steps + 1) * self.dtau
        g[-1] = 1.0
        return g


def _check(z, step, strict):
    bad = ~np.all(np.isfinite(z), axis=-1)
    if np.any(bad) and strict:
        raise DivergenceError(f"non-finite state at step {step}", step=step)
    return bad


def cfg_velocity(prior: GMMPrior, z, tau, w, cond="clean", tau_min=TAU_MIN):
    """``v_null + w * (v_cond - v_null)``."""
    v_null = velocity(prior, z, tau, "null", tau_min)
    if w == 0:
        return v_null
    v_cond = velocity(prior, z, tau, cond, tau_min)
    if w == 1:
        return v_cond
    return v_null + w * (v_cond - v_null)


def invert(prior: GMMPrior, z0, cfg: SolverConfig, strict=True, trajectory=None):
    """Forward Euler from ``tau_min`` to 1 under null conditioning.

    With ``strict=False`` divergent rows are carried as non-finite values
    instead of raising. If ``trajectory`` is a list, each state is appended.
    """
    grid = cfg.grid()
    z = np.array(z0, dtype=np.float64)
    with np.errstate(all="ignore"):
        for j in range(cfg.n_steps):
            z = z + cfg.dtau * velocity(prior, z, grid[j], "null", cfg.tau_min)
            _check(z, j, strict)
            if trajectory is not None:
                trajectory.append(z.copy())
    return z


def generate(prior: GMMPrior, z_noise, cfg: SolverConfig, strict=True, trajectory=None):
    """Backward Euler from 1 to ``tau_min`` with the guided velocity.

    Step ``j`` (run for ``j = N-1..0``) reuses the evaluation time ``tau_j`` of
    the matching inversion step, so both passes share one grid of velocity
    times and the leading Euler errors of a null round trip cancel.
    """
    grid = cfg.grid()
    z = np.array(z_noise, dtype=np.float64)
    with np.errstate(all="ignore"):
        for j in range(cfg.n_steps - 1, -1, -1):
            v = cfg_velocity(prior, z, grid[j], cfg.guidance_w, cfg.condition, cfg.tau_min)
            z = z - cfg.dtau * v
            _check(z, cfg.n_steps - 1 - j, strict)
            if trajectory is not None:
                trajectory.append(z.copy())
    return z


def refine_latent(prior, z_in, cfg: SolverConfig, strict=True):
    z_out = generate(prior, invert(prior, z_in, cfg, strict), cfg, strict)
    if cfg.blend != 1.0:
        z_out = cfg.blend * z_out + (1 - cfg.blend) * np.asarray(z_in)
    return z_out


def refine(prior: GMMPrior, basis: Basis, img, cfg: SolverConfig, strict=True):
    """Map images ``(H, W)`` or ``(n, H, W)`` through inversion then guided generation.

    The result lies in the basis span. With ``strict=False`` diverged images
    come back filled with NaN.
    """
    return decode(refine_latent(prior, encode(img, basis), cfg, strict), basis)
