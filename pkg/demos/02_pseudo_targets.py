"""
Pseudo-targets for a shifted domain
===================================

A restorer trained on mildly degraded images meets heavily degraded ones.
We refine its predictions with the guided flow and keep only those the
density gate accepts.
"""

import numpy as np

from lego.adapt import stage0_infer, stage1_build
from lego.gate import GateConfig, calibrate
from lego.imagecore import build_dct_basis, encode
from lego.metrics import psnr
from lego.odeflow import SolverConfig
from lego.oracle import build_oracle
from lego.restonet import init_params, train
from lego.synthgen import degrade_set, generator_prior, make_clean_set, preset_strong, preset_weak

rng = np.random.default_rng(0)
basis = build_dct_basis(32, 32, 48)

# a synthetic clean source, and two degradations of it
gen = generator_prior(basis, 8, rng)
clean, affine = make_clean_set(gen, basis, 768, rng)
weak, _ = degrade_set(clean, preset_weak(), rng)
strong, _ = degrade_set(clean, preset_strong(), rng)
train_ids, ood_ids = slice(0, 512), slice(512, 768)


def mean_psnr(a, b):
    return np.mean([psnr(x, y) for x, y in zip(a, b)])


###############################################################################
# Pre-train on weak pairs only. The strong domain is visibly harder.
params, _ = train(init_params(rng), weak[train_ids], clean[train_ids], 600, 32, 2e-3, 0.01, rng)
x_tilde = stage0_infer(params, strong[ood_ids])
print("stage 0: weak %.2f dB, strong %.2f dB" % (
    mean_psnr(stage0_infer(params, weak[ood_ids]), clean[ood_ids]), mean_psnr(x_tilde, clean[ood_ids])))

###############################################################################
# The oracle sees clean ID latents and the unlabeled strong inputs; the gate
# is calibrated so clean images score mean 6, std 1.
prior = build_oracle(encode(clean[train_ids], basis), encode(strong[ood_ids], basis), 8, rng)
a, b = calibrate(prior, basis, clean[train_ids])
pool = stage1_build(prior, basis, x_tilde, strong[ood_ids], SolverConfig(), GateConfig(4.2, a, b))

# clean references are used here only to report quality, never to build the pool
kept = pool.kept
print("gate kept %d of %d" % (pool.stats.passed, pool.stats.total))
print("stage 1: x_tilde %.2f dB -> x_hat %.2f dB (kept subset)" % (
    mean_psnr(pool.x_tilde[kept], clean[ood_ids][kept]), mean_psnr(pool.x_hat[kept], clean[ood_ids][kept])))
