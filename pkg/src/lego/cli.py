"""``lego`` command line: gen-data, fit-oracle, pretrain, adapt, eval, ablate.

Every command reads a JSON config, works inside one workdir guarded by a file
lock, and writes tensor/JSON/CSV artifacts with no timestamps, so re-running a
command with the same config and seed reproduces its outputs byte for byte.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
from filelock import FileLock

from . import adapt, gate, imagecore, metrics, oracle, restonet, synthgen
from .config import RunConfig, load_config
from .errors import (ConfigError, DegenerateClusterError, DivergenceError, FormatError,
                     MissingArtifactError)

log = logging.getLogger("lego")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGENCE = 0, 2, 3, 4
COMMANDS = ("gen-data", "fit-oracle", "pretrain", "adapt", "eval", "ablate")
SPLITS = ("id_train", "ood_train", "id_test", "ood_test")


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Workdir:
    """Fixed artifact layout under one root directory."""

    def __init__(self, root):
        self.root = Path(root)
        self.data = self.root / "data"
        self.oracle = self.root / "oracle"
        self.pretrain = self.root / "pretrain"
        self.adapt = self.root / "adapt"
        self.eval = self.root / "eval"
        self.ablate = self.root / "ablate"

    def manifest(self, split):
        return self.data / f"manifest_{split}.json"

    def require(self, path, what):
        if not Path(path).exists():
            raise MissingArtifactError(f"missing {what}: {path} (run the upstream command first)")
        return Path(path)


class Context:
    def __init__(self, cfg: RunConfig, wd: Workdir):
        self.cfg = cfg
        self.wd = wd
        self.hash = cfg.digest()

    @property
    def basis(self):
        im = self.cfg.image
        return imagecore.build_dct_basis(im.height, im.width, im.d)

    def stamp(self, report: dict) -> dict:
        return {**report, "config": self.cfg.to_dict(), "config_hash": self.hash}

    def load_split(self, split, want_clean=True):
        man = _read_json(self.wd.require(self.wd.manifest(split), f"dataset manifest for {split}"))
        y = imagecore.load_array(self.wd.require(self.wd.data / man["degraded"], f"{split} tensor"))
        x = None
        if want_clean:
            if man["clean"]["path"] is None:
                raise MissingArtifactError(f"split {split} has no clean references")
            x = imagecore.load_array(self.wd.require(self.wd.data / man["clean"]["path"], f"{split} clean tensor"))
        return y, x, man

    def load_prior_and_gate(self):
        self.wd.require(self.wd.oracle / "oracle.json", "oracle checkpoint")
        prior = oracle.load_prior(self.wd.oracle)
        g = _read_json(self.wd.require(self.wd.oracle / "gate.json", "gate calibration"))
        gcfg = gate.GateConfig(self.cfg.gate.alpha, g["a"], g["b"], self.cfg.gate.sharpness_weight)
        return prior, gcfg

    def load_net(self, which):
        d = {"pretrain": self.wd.pretrain, "adapt": self.wd.adapt / "checkpoint"}[which]
        self.wd.require(d / "checkpoint.json", f"{which} checkpoint")
        return restonet.load_checkpoint(d)


# -- commands -------------------------------------------------------------------

def cmd_gen_data(ctx: Context):
    cfg, wd = ctx.cfg, ctx.wd
    wd.data.mkdir(parents=True, exist_ok=True)
    seed = cfg.seed("data")
    basis = ctx.basis
    dc = cfg.data

    def stream(i):
        # independent stream per split/stage, keyed by (seed, index)
        return np.random.default_rng([seed, i])

    gen = synthgen.generator_prior(basis, dc.generator.components, stream(0),
                                   dc.generator.decay, dc.generator.spread)
    oracle.save_prior(wd.data / "generator", gen, seed, {"role": "ground-truth clean source"})
    weak, strong = dc.weak.spec(), dc.strong.spec()
    affine = synthgen.clean_affine(gen, basis)

    id_clean, _ = synthgen.make_clean_set(gen, basis, dc.n_id_train, stream(1), affine)
    id_deg, id_draws = synthgen.degrade_set(id_clean, weak, stream(2))
    ood_clean, _ = synthgen.make_clean_set(gen, basis, dc.n_ood, stream(3), affine)
    ood_deg, ood_draws = synthgen.degrade_set(ood_clean, strong, stream(4))
    del ood_clean  # unlabeled domain: references are never written
    test_clean, _ = synthgen.make_clean_set(gen, basis, dc.n_test, stream(5), affine)
    idt_deg, idt_draws = synthgen.degrade_set(test_clean, weak, stream(6))
    oodt_deg, oodt_draws = synthgen.degrade_set(test_clean, strong, stream(7))

    imagecore.save_array(wd.data / "id_train_clean.lgt", id_clean)
    imagecore.save_array(wd.data / "test_clean.lgt", test_clean)
    layout = {
        "id_train": (id_deg, id_draws, weak, {"path": "id_train_clean.lgt", "access": "train"}),
        "ood_train": (ood_deg, ood_draws, strong, {"path": None, "access": "withheld"}),
        "id_test": (idt_deg, idt_draws, weak, {"path": "test_clean.lgt", "access": "eval-only"}),
        "ood_test": (oodt_deg, oodt_draws, strong, {"path": "test_clean.lgt", "access": "eval-only"}),
    }
    index = {}
    for split, (deg, draws, spec, clean_ref) in layout.items():
        name = f"{split}_degraded.lgt"
        imagecore.save_array(wd.data / name, deg)
        man = ctx.stamp({
            "split": split, "count": int(len(deg)), "master_seed": cfg.seeds.master, "data_seed": seed,
            "image": {"height": cfg.image.height, "width": cfg.image.width},
            "degraded": name, "clean": clean_ref,
            "degradation": {"spec": spec.to_dict(), "draws": draws},
            "affine": {"a": affine[0], "b": affine[1]},
        })
        _dump(wd.manifest(split), man)
        index[split] = {"manifest": wd.manifest(split).name, "count": int(len(deg))}
    _dump(wd.data / "dataset.json", ctx.stamp({"splits": index, "affine": {"a": affine[0], "b": affine[1]},
                                               "generator": "generator/oracle.json"}))
    log.info("gen-data: %s", {k: v["count"] for k, v in index.items()})


def cmd_fit_oracle(ctx: Context):
    cfg, wd = ctx.cfg, ctx.wd
    basis = ctx.basis
    _, id_clean, _ = ctx.load_split("id_train")
    ood_deg, _, _ = ctx.load_split("ood_train", want_clean=False)
    oc = cfg.oracle
    seed = cfg.seed("oracle")
    prior = oracle.build_oracle(imagecore.encode(id_clean, basis), imagecore.encode(ood_deg, basis),
                                oc.k_per_class, np.random.default_rng(seed), oc.em_iters, oc.em_tol)
    oracle.save_prior(wd.oracle, prior, seed, {"config_hash": ctx.hash,
                                               "sources": {"clean": "id_train", "degraded": "ood_train"}})
    # calibrate against the stored (float32) prior so later commands see the same numbers
    prior = oracle.load_prior(wd.oracle)
    a, b = gate.calibrate(prior, basis, id_clean)
    gcfg = gate.GateConfig(cfg.gate.alpha, a, b, cfg.gate.sharpness_weight)
    clean_scores = gate.quality_score(prior, basis, id_clean, gcfg)
    id_deg, _, _ = ctx.load_split("id_train", want_clean=False)
    _dump(wd.oracle / "gate.json", ctx.stamp({
        "a": a, "b": b, "alpha": cfg.gate.alpha, "calibration_set": "id_train clean",
        "clean_score_mean": float(clean_scores.mean()), "clean_score_std": float(clean_scores.std()),
        "weak_score_mean": float(gate.quality_score(prior, basis, id_deg, gcfg).mean()),
    }))
    log.info("fit-oracle: K=%d, gate a=%.4g b=%.4g", prior.n_components, a, b)


def cmd_pretrain(ctx: Context):
    cfg, wd = ctx.cfg, ctx.wd
    y, x, _ = ctx.load_split("id_train")
    pc = cfg.pretrain
    seed = cfg.seed("pretrain")
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    params, losses = restonet.train(restonet.init_params(rng), y, x, pc.iters, pc.batch_size,
                                    pc.lr, pc.weight_decay, rng)
    log.info("pretrain: %d iters in %.1f s", pc.iters, time.perf_counter() - t0)
    restonet.save_checkpoint(wd.pretrain, params, {"seed": seed, "iters": pc.iters,
                                                   "loss_curve": "loss.lgt", "config_hash": ctx.hash})
    imagecore.save_array(wd.pretrain / "loss.lgt", losses)
    tail = losses[-min(100, len(losses)):] if len(losses) else losses
    _dump(wd.pretrain / "report.json", ctx.stamp({
        "iters": pc.iters,
        "initial_loss": float(losses[0]) if len(losses) else None,
        "final_loss": float(tail.mean()) if len(tail) else None,
        "identity_loss": float(np.mean((y - x) ** 2)),
    }))


def _pool_from_disk(ctx: Context):
    y, _, _ = ctx.load_split("ood_train", want_clean=False)
    d = ctx.wd.adapt
    x_tilde = imagecore.load_array(ctx.wd.require(d / "x_tilde.lgt", "stage-0 predictions"))
    x_hat = imagecore.load_array(ctx.wd.require(d / "x_hat.lgt", "stage-1 pseudo-targets"))
    rep = _read_json(ctx.wd.require(d / "gate_report.json", "gate report"))
    scores = np.array([-np.inf if s is None else s for s in rep["scores"]])
    kept, stats = gate.threshold(scores, rep["alpha"])
    diverged = ~np.all(np.isfinite(x_hat), axis=(1, 2))
    return adapt.PseudoPool(y, x_tilde, x_hat, scores, kept, stats, diverged)


def cmd_adapt(ctx: Context):
    cfg, wd = ctx.cfg, ctx.wd
    basis = ctx.basis
    params_id, _ = ctx.load_net("pretrain")
    prior, gcfg = ctx.load_prior_and_gate()
    id_y, id_x, _ = ctx.load_split("id_train")
    ood_y, _, _ = ctx.load_split("ood_train", want_clean=False)
    wd.adapt.mkdir(parents=True, exist_ok=True)

    x_tilde = adapt.stage0_infer(params_id, ood_y)
    names = [f"ood_train[{i}]" for i in range(len(ood_y))]
    pool = adapt.stage1_build(prior, basis, x_tilde, ood_y, cfg.solver.solver(), gcfg,
                              audit_path=wd.adapt / "stage1_audit.jsonl", input_names=names)
    imagecore.save_array(wd.adapt / "x_tilde.lgt", x_tilde)
    imagecore.save_array(wd.adapt / "x_hat.lgt", pool.x_hat)
    gate.write_report(wd.adapt / "gate_report.json", gcfg, pool.scores, pool.kept, pool.stats,
                      {"config_hash": ctx.hash, "candidates": "refined ood_train predictions"})
    log.info("adapt: gate kept %d/%d (%.3f)", pool.stats.passed, pool.stats.total, pool.stats.pass_rate)

    seed = cfg.seed("adapt")
    res = adapt.stage2_finetune(params_id, (id_y, id_x), pool.selected(), cfg.mix.mix(),
                                np.random.default_rng(seed))
    restonet.save_checkpoint(wd.adapt / "checkpoint", res.params, {
        "seed": seed, "iters": cfg.mix.iters, "loss_curve": "../loss.csv", "config_hash": ctx.hash,
        "ratio": res.ratio_used, "fell_back": res.fell_back})
    with open(wd.adapt / "loss.csv", "w") as fh:
        fh.write("iter,loss,loss_id,loss_ood\n")
        for i, row in enumerate(zip(res.loss, res.loss_id, res.loss_ood)):
            fh.write(f"{i}," + ",".join(repr(float(v)) for v in row) + "\n")
    artifacts = ["x_tilde.lgt", "x_hat.lgt", "gate_report.json", "stage1_audit.jsonl", "loss.csv",
                 *(f"checkpoint/{n}.lgt" for n in restonet.PARAM_NAMES), "checkpoint/checkpoint.json"]
    _dump(wd.adapt / "run_manifest.json", ctx.stamp({
        "stages": {
            "stage0": {"checkpoint": "pretrain", "inputs": "ood_train", "output": "x_tilde.lgt"},
            "stage1": {"solver": cfg.solver.__dict__, "gate": {"alpha": gcfg.alpha, "a": gcfg.a, "b": gcfg.b},
                       "output": "x_hat.lgt", "audit": "stage1_audit.jsonl",
                       "diverged": int(pool.diverged.sum()), "gate_stats": pool.stats.to_dict()},
            "stage2": {"seed": seed, "ratio": res.ratio_used, "fell_back": res.fell_back,
                       "pool_size": int(len(pool.kept)), "b_id_b_ood": list(cfg.mix.mix(res.ratio_used).split()),
                       "final_loss": float(res.loss[-1]) if len(res.loss) else None},
        },
        "artifacts": {a: _sha256(wd.adapt / a) for a in artifacts},
    }))


def _report(ctx, params, split, name):
    y, x, _ = ctx.load_split(split)
    rep = metrics.evaluate(params, y, x, ctx.basis, {"config_hash": ctx.hash, "split": split, "model": name})
    rep.write(ctx.wd.eval / f"{name}_{split}.json", ctx.wd.eval / f"{name}_{split}.csv")
    return rep.summary()


def cmd_eval(ctx: Context):
    wd = ctx.wd
    wd.eval.mkdir(parents=True, exist_ok=True)
    models = {"baseline": ctx.load_net("pretrain")[0]}
    if (wd.adapt / "checkpoint" / "checkpoint.json").exists():
        models["adapted"] = ctx.load_net("adapt")[0]
    summary = {name: {split: _report(ctx, p, split, name) for split in ("ood_test", "id_test")}
               for name, p in models.items()}
    out = {"models": summary}
    if "adapted" in summary:
        b, a = summary["baseline"], summary["adapted"]
        out["delta"] = {
            "ood_psnr_db": a["ood_test"]["psnr_mean"] - b["ood_test"]["psnr_mean"],
            "ood_frechet_ratio": a["ood_test"]["frechet"] / b["ood_test"]["frechet"],
            "id_psnr_db": a["id_test"]["psnr_mean"] - b["id_test"]["psnr_mean"],
        }
    _dump(wd.eval / "eval_summary.json", ctx.stamp(out))
    log.info("eval: %s", out.get("delta", summary["baseline"]["ood_test"]))


def cmd_ablate(ctx: Context, which="all"):
    cfg, wd = ctx.cfg, ctx.wd
    basis = ctx.basis
    params_id, _ = ctx.load_net("pretrain")
    adapted, meta = ctx.load_net("adapt")
    pool = _pool_from_disk(ctx)
    id_pairs = ctx.load_split("id_train")[:2]
    ood_test = ctx.load_split("ood_test")[:2]
    id_test = ctx.load_split("id_test")[:2]
    seed = cfg.seed("adapt")
    mix = cfg.mix.mix()
    # the adapt run used this exact seed, pool and ratio, so it is reused, not retrained
    reusable = not meta.get("fell_back", False) and meta.get("config_hash") == ctx.hash
    wd.ablate.mkdir(parents=True, exist_ok=True)
    if which in ("filter", "all"):
        rows = adapt.ablate_filter(params_id, id_pairs, pool, mix, seed, ood_test, basis,
                                   reuse={"with_filter": adapted} if reusable else None)
        _dump(wd.ablate / "filter.json", ctx.stamp({"gate_stats": pool.stats.to_dict(), "rows": rows}))
        log.info("ablate filter: %s", {k: round(v["frechet"], 4) for k, v in rows.items()})
    if which in ("mix", "all"):
        rows = adapt.ablate_mix(cfg.ablate.ratios, params_id, id_pairs, pool.selected(), mix, seed,
                                ood_test, basis, id_test=id_test,
                                reuse={mix.ratio: adapted} if reusable else None)
        adapt.write_mix_csv(wd.ablate / "mix.csv", rows)
        _dump(wd.ablate / "mix.json", ctx.stamp({"rows": rows}))
        log.info("ablate mix: %s", [(r["ratio"], round(r["psnr"], 3)) for r in rows])


# -- entry point ----------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="lego", description="Three-stage domain adaptation pipeline.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON run config")
    ap.add_argument("--seed", type=int, default=None, help="override the master seed")
    ap.add_argument("--workdir", default=None, help="artifact directory (else $LEGO_WORKDIR)")
    ap.add_argument("--which", choices=("filter", "mix", "all"), default="all",
                    help="ablation to run (ablate only)")
    ap.add_argument("-q", "--quiet", action="store_true")
    return ap


def resolve_workdir(arg):
    root = arg or os.environ.get("LEGO_WORKDIR")
    if not root:
        raise ConfigError("no workdir: pass --workdir or set LEGO_WORKDIR")
    return Path(root)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not logging.getLogger().handlers:
        logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be nonnegative")
            cfg = cfg.with_master_seed(args.seed)
        root = resolve_workdir(args.workdir)
        root.mkdir(parents=True, exist_ok=True)
        ctx = Context(cfg, Workdir(root))
        with FileLock(str(root / ".lego.lock")):
            if args.command == "ablate":
                cmd_ablate(ctx, args.which)
            else:
                globals()["cmd_" + args.command.replace("-", "_")](ctx)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (DivergenceError, DegenerateClusterError) as exc:
        log.error("numerical divergence: %s", exc)
        return EXIT_DIVERGENCE
    except (MissingArtifactError, FormatError, OSError) as exc:
        log.error("missing artifact or I/O error: %s", exc)
        return EXIT_IO
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
