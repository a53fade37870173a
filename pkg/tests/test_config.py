import json
from pathlib import Path

import pytest

from lego.config import RunConfig, STAGES, from_dict, load_config
from lego.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_default_file_matches_defaults():
    assert load_config(CONFIGS / "default.json") == RunConfig()
    cfg = RunConfig()
    assert (cfg.solver.n_steps, cfg.solver.guidance_w, cfg.gate.alpha) == (50, 3.5, 4.2)
    assert (cfg.mix.ratio, cfg.mix.batch_size) == (0.9, 32)
    assert (cfg.data.n_id_train, cfg.data.n_ood, cfg.data.n_test) == (2048, 512, 256)


def test_round_trip_and_digest():
    cfg = load_config(CONFIGS / "smoke.json")
    assert from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    assert from_dict(cfg.to_dict()).digest() == cfg.digest()
    assert cfg.with_master_seed(5).digest() != cfg.digest()


@pytest.mark.parametrize("patch", [
    {"solverr": {}},
    {"solver": {"steps": 10}},
    {"solver": {"n_steps": "50"}},
    {"solver": {"n_steps": 0}},
    {"gate": {"alpha": True}},
    {"mix": {"ratio": 1.5}},
    {"image": {"d": 5000}},
    {"version": 2},
    {"seeds": {"master": -1}},
    {"ablate": {"ratios": [0.5, 2.0]}},
    {"data": {"strong": {"kernel_sizes": [41]}}},
])
def test_strict_parsing_rejects(patch):
    base = RunConfig().to_dict()
    for k, v in patch.items():
        if isinstance(v, dict):
            base[k] = {**base.get(k, {}), **v}
        else:
            base[k] = v
    with pytest.raises(ConfigError):
        from_dict(base)


def test_version_required_and_files(tmp_path):
    with pytest.raises(ConfigError):
        from_dict({})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")
    assert from_dict({"version": 1}) == RunConfig()


def test_stage_seeds():
    cfg = RunConfig()
    seeds = [cfg.seed(s) for s in STAGES]
    assert len(set(seeds)) == len(STAGES)
    assert seeds == [RunConfig().seed(s) for s in STAGES]
    assert cfg.with_master_seed(1).seed("data") != seeds[0]
    explicit = from_dict({"version": 1, "seeds": {"master": 0, "pretrain": 17}})
    assert explicit.seed("pretrain") == 17 and explicit.seed("data") == seeds[0]
