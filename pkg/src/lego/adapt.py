"""Stage orchestration: OOD inference, pseudo-pair synthesis, mixed-supervised
fine-tuning, and the filtering / mixing-ratio ablations."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergenceError
from .gate import GateConfig, GateStats, quality_score, threshold
from .imagecore import Basis
from .metrics import evaluate
from .odeflow import SolverConfig, refine
from .oracle import GMMPrior
from .restonet import OptState, adamw_step, forward, loss_and_grad

log = logging.getLogger(__name__)

SWEEP_RATIOS = (1.0, 0.95, 0.9, 0.6, 0.3, 0.0)


@dataclass(frozen=True)
class MixConfig:
    ratio: float = 0.9
    batch_size: int = 32
    iters: int = 1000
    lr: float = 5e-4
    weight_decay: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError(f"mixing ratio must lie in [0, 1], got {self.ratio}")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.iters < 0:
            raise ValueError("iters must be >= 0")

    def split(self) -> tuple[int, int]:
        """``(B_id, B_ood)`` with ``B_id = round(ratio * B)``, halves rounded away from zero."""
        b_id = int(math.floor(self.ratio * self.batch_size + 0.5))
        return b_id, self.batch_size - b_id


@dataclass
class PseudoPool:
    """Aligned Stage-1 arrays. ``kept`` indexes the gate survivors."""
    y: np.ndarray
    x_tilde: np.ndarray
    x_hat: np.ndarray
    scores: np.ndarray
    kept: np.ndarray
    stats: GateStats
    diverged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def selected(self):
        return self.y[self.kept], self.x_hat[self.kept]

    def unfiltered(self):
        ok = np.flatnonzero(np.all(np.isfinite(self.x_hat), axis=(1, 2)))
        return self.y[ok], self.x_hat[ok]


def stage0_infer(params, inputs) -> np.ndarray:
    """Run the pre-trained restorer on every unlabeled input, preserving order."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if len(inputs) == 0:
        return inputs.copy()
    return forward(params, inputs)


def stage1_build(prior: GMMPrior, basis: Basis, x_tilde, y, solver: SolverConfig,
                 gate_cfg: GateConfig, audit_path=None, input_names=None) -> PseudoPool:
    """Refine initial predictions into pseudo-targets and gate them.

    Diverged refinements are recorded and count as gate failures.
    """
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x_tilde) != len(y):
        raise ValueError("x_tilde and y are not aligned")
    x_hat = refine(prior, basis, x_tilde, solver, strict=False)
    diverged = ~np.all(np.isfinite(x_hat), axis=(1, 2))
    if diverged.any():
        log.warning("%d of %d refinements diverged", int(diverged.sum()), len(x_hat))
    scores = quality_score(prior, basis, x_hat, gate_cfg)
    kept, stats = threshold(scores, gate_cfg.alpha)
    if audit_path is not None:
        in_scores = quality_score(prior, basis, x_tilde, gate_cfg)
        names = input_names or [f"ood[{i}]" for i in range(len(y))]
        with open(audit_path, "w") as fh:
            for i in range(len(y)):
                fh.write(json.dumps({
                    "input": names[i], "N": solver.n_steps, "w": solver.guidance_w,
                    "tau_min": solver.tau_min, "condition": solver.condition,
                    "score_in": _finite_or_none(in_scores[i]),
                    "score_out": _finite_or_none(scores[i]),
                    "passed": bool(scores[i] >= gate_cfg.alpha),
                    "diverged": bool(diverged[i]),
                }, sort_keys=True) + "\n")
    return PseudoPool(y, x_tilde, x_hat, scores, kept, stats, diverged)


def _finite_or_none(v):
    return float(v) if np.isfinite(v) else None


def compose_batch(n_id, n_ood, mix: MixConfig, rng):
    """Sample index arrays ``(id_idx, ood_idx)`` for one mixed batch.

    Raises ``ValueError`` when OOD samples are requested from an empty pool.
    """
    b_id, b_ood = mix.split()
    if b_id > 0 and n_id == 0:
        raise ValueError("in-distribution pool is empty")
    if b_ood > 0 and n_ood == 0:
        raise ValueError("pseudo-pair pool is empty but the batch needs OOD samples")
    id_idx = rng.integers(0, n_id, size=b_id) if b_id else np.zeros(0, dtype=int)
    ood_idx = rng.integers(0, n_ood, size=b_ood) if b_ood else np.zeros(0, dtype=int)
    return id_idx, ood_idx


def mixed_loss_and_grad(params, id_batch, ood_batch):
    """Group-mean ID loss plus group-mean OOD loss, and the summed gradient.

    Returns ``(total, l_id, l_ood, grads)``; an empty group contributes 0.
    """
    total_g, l_id, l_ood = None, 0.0, 0.0
    for batch, slot in ((id_batch, "id"), (ood_batch, "ood")):
        if batch is None or len(batch[0]) == 0:
            continue
        loss, g = loss_and_grad(params, *batch)
        if slot == "id":
            l_id = loss
        else:
            l_ood = loss
        total_g = g if total_g is None else {k: total_g[k] + g[k] for k in g}
    return l_id + l_ood, l_id, l_ood, total_g


@dataclass
class FinetuneResult:
    params: dict
    loss: np.ndarray
    loss_id: np.ndarray
    loss_ood: np.ndarray
    ratio_used: float
    fell_back: bool = False


def stage2_finetune(params_id, id_pairs, sel_pairs, mix: MixConfig, rng,
                    dtype=np.float32) -> FinetuneResult:
    """Fine-tune from the pre-trained weights on the mixed objective.

    ``id_pairs`` and ``sel_pairs`` are ``(degraded, target)`` stacks. An empty
    pseudo pool falls back to ratio 1.0 with a warning.
    """
    y_id, x_id = (np.asarray(a, dtype=dtype) for a in id_pairs)
    y_sel, x_sel = (np.asarray(a, dtype=dtype) for a in sel_pairs)
    fell_back = False
    if mix.split()[1] > 0 and len(y_sel) == 0:
        log.warning("no pseudo-pairs passed the gate; falling back to ratio 1.0")
        mix = MixConfig(1.0, mix.batch_size, mix.iters, mix.lr, mix.weight_decay)
        fell_back = True
    params = {k: np.asarray(p, dtype=dtype) for k, p in params_id.items()}
    opt = OptState.for_params(params, mix.lr, mix.weight_decay)
    loss = np.empty(mix.iters)
    loss_id = np.empty(mix.iters)
    loss_ood = np.empty(mix.iters)
    for it in range(mix.iters):
        i_id, i_ood = compose_batch(len(y_id), len(y_sel), mix, rng)
        with np.errstate(over="ignore", invalid="ignore"):
            total, l_id, l_ood, grads = mixed_loss_and_grad(
                params, (y_id[i_id], x_id[i_id]), (y_sel[i_ood], x_sel[i_ood]))
        if not np.isfinite(total):
            raise DivergenceError(f"fine-tuning loss became non-finite at iteration {it}", step=it)
        loss[it], loss_id[it], loss_ood[it] = total, l_id, l_ood
        opt, params = adamw_step(opt, params, grads)
    out = {k: p.astype(np.float64) for k, p in params.items()}
    return FinetuneResult(out, loss, loss_id, loss_ood, mix.ratio, fell_back)


# -- ablations ------------------------------------------------------------------

def _test_metrics(params, test, basis):
    rep = evaluate(params, test[0], test[1], basis)
    s = rep.summary()
    return {"psnr": s["psnr_mean"], "ssim": s["ssim_mean"], "frechet": s["frechet"]}


def ablate_filter(params_id, id_pairs, pool: PseudoPool, mix: MixConfig, seed, test, basis,
                  reuse=None):
    """Fine-tune with the gated pool and with every finite candidate; same seed.

    ``test`` is an OOD ``(degraded, clean)`` pair of stacks. ``reuse`` may map
    ``"with_filter"`` / ``"without_filter"`` to params already trained with
    exactly this seed and pool, which are then only evaluated.
    """
    reuse = reuse or {}
    rows = {}
    runs = {"with_filter": pool.selected(), "without_filter": pool.unfiltered()}
    for name, sel in runs.items():
        if name in reuse:
            params, fell_back = reuse[name], False
        else:
            res = stage2_finetune(params_id, id_pairs, sel, mix, np.random.default_rng(seed))
            params, fell_back = res.params, res.fell_back
        rows[name] = {"pool_size": int(len(sel[0])), "fell_back": fell_back,
                      **_test_metrics(params, test, basis)}
    return rows


def ablate_mix(ratios, params_id, id_pairs, sel_pairs, mix: MixConfig, seed, test, basis,
               id_test=None, reuse=None):
    """One fine-tuning run per ratio with shared seed and pools; rows sorted by ratio, descending.

    ``reuse`` maps a ratio to params already trained with this seed and pool.
    """
    reuse = {float(k): v for k, v in (reuse or {}).items()}
    rows = []
    for r in sorted(set(float(x) for x in ratios), reverse=True):
        cfg = MixConfig(r, mix.batch_size, mix.iters, mix.lr, mix.weight_decay)
        if r in reuse:
            params, fell_back = reuse[r], False
        else:
            res = stage2_finetune(params_id, id_pairs, sel_pairs, cfg, np.random.default_rng(seed))
            params, fell_back = res.params, res.fell_back
        row = {"ratio": r, "b_id": cfg.split()[0], "b_ood": cfg.split()[1], "fell_back": fell_back,
               **_test_metrics(params, test, basis)}
        if id_test is not None:
            row["id_psnr"] = _test_metrics(params, id_test, basis)["psnr"]
        rows.append(row)
    return rows


MIX_CSV_FIELDS = ("ratio", "b_id", "b_ood", "psnr", "ssim", "frechet", "id_psnr", "fell_back")


def write_mix_csv(path, rows):
    lines = [",".join(MIX_CSV_FIELDS)]
    for r in rows:
        lines.append(",".join(repr(r.get(k, "")) if isinstance(r.get(k), float) else str(r.get(k, ""))
                              for k in MIX_CSV_FIELDS))
    Path(path).write_text("\n".join(lines) + "\n")
