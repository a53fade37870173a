"""Run configuration: strict JSON parsing, defaults, seeds and a canonical hash."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adapt import SWEEP_RATIOS, MixConfig
from .errors import ConfigError
from .gate import GateConfig
from .odeflow import SolverConfig
from .synthgen import DegradationSpec, preset_strong, preset_weak

CONFIG_VERSION = 1
STAGES = ("data", "oracle", "pretrain", "adapt")


@dataclass
class ImageSection:
    height: int = 32
    width: int = 32
    d: int = 48


@dataclass
class GeneratorSection:
    components: int = 8
    decay: float = 1.0
    spread: float = 0.6


@dataclass
class DegradationSection:
    kernel_sizes: tuple = ()
    blur_sigma_range: tuple = ()
    gauss_noise_range: tuple = ()
    poisson_scale_range: tuple = ()

    @classmethod
    def of(cls, spec: DegradationSpec):
        return cls(spec.kernel_sizes, spec.blur_sigma_range, spec.gauss_noise_range, spec.poisson_scale_range)

    def spec(self) -> DegradationSpec:
        return DegradationSpec(tuple(int(k) for k in self.kernel_sizes), tuple(self.blur_sigma_range),
                               tuple(self.gauss_noise_range), tuple(self.poisson_scale_range))


@dataclass
class DataSection:
    n_id_train: int = 2048
    n_ood: int = 512
    n_test: int = 256
    generator: GeneratorSection = field(default_factory=GeneratorSection)
    weak: DegradationSection = field(default_factory=lambda: DegradationSection.of(preset_weak()))
    strong: DegradationSection = field(default_factory=lambda: DegradationSection.of(preset_strong()))


@dataclass
class OracleSection:
    k_per_class: int = 8
    em_iters: int = 200
    em_tol: float = 1e-6


@dataclass
class SolverSection:
    n_steps: int = 50
    guidance_w: float = 3.5
    tau_min: float = 1e-3
    condition: str = "clean"
    blend: float = 1.0

    def solver(self) -> SolverConfig:
        return SolverConfig(self.n_steps, self.guidance_w, self.tau_min, self.condition, self.blend)


@dataclass
class GateSection:
    alpha: float = 4.2
    sharpness_weight: float = 0.0


@dataclass
class PretrainSection:
    iters: int = 5000
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.01


@dataclass
class MixSection:
    ratio: float = 0.9
    batch_size: int = 32
    iters: int = 1000
    lr: float = 5e-4
    weight_decay: float = 0.01

    def mix(self, ratio=None) -> MixConfig:
        r = self.ratio if ratio is None else ratio
        return MixConfig(r, self.batch_size, self.iters, self.lr, self.weight_decay)


@dataclass
class AblateSection:
    ratios: tuple = SWEEP_RATIOS


@dataclass
class SeedSection:
    master: int = 0
    data: typing.Optional[int] = None
    oracle: typing.Optional[int] = None
    pretrain: typing.Optional[int] = None
    adapt: typing.Optional[int] = None


@dataclass
class RunConfig:
    version: int = CONFIG_VERSION
    image: ImageSection = field(default_factory=ImageSection)
    data: DataSection = field(default_factory=DataSection)
    oracle: OracleSection = field(default_factory=OracleSection)
    solver: SolverSection = field(default_factory=SolverSection)
    gate: GateSection = field(default_factory=GateSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    mix: MixSection = field(default_factory=MixSection)
    ablate: AblateSection = field(default_factory=AblateSection)
    seeds: SeedSection = field(default_factory=SeedSection)

    def to_dict(self):
        return _plain(dataclasses.asdict(self))

    def digest(self) -> str:
        """sha256 of the canonical JSON form; equal configs hash equally."""
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()

    def seed(self, stage: str) -> int:
        """Explicit per-stage seed, or one derived from (master, stage index)."""
        explicit = getattr(self.seeds, stage)
        if explicit is not None:
            return int(explicit)
        ss = np.random.SeedSequence([int(self.seeds.master), STAGES.index(stage)])
        return int(ss.generate_state(1, dtype=np.uint64)[0])

    def with_master_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, seeds=dataclasses.replace(self.seeds, master=int(seed)))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# -- strict parsing -------------------------------------------------------------

def _coerce(value, hint, where):
    origin = typing.get_origin(hint)
    if origin is typing.Union:
        if value is None:
            return None
        (inner,) = [a for a in typing.get_args(hint) if a is not type(None)]
        return _coerce(value, inner, where)
    if dataclasses.is_dataclass(hint):
        return _build(hint, value, where)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if hint is tuple:
        if not isinstance(value, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{where}: expected a list of numbers, got {value!r}")
        return tuple(value)
    raise ConfigError(f"{where}: unsupported field type {hint}")


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    base = cls()
    kwargs = {}
    for name in names:
        if name in data:
            kwargs[name] = _coerce(data[name], hints[name], f"{where}.{name}" if where else name)
        else:
            kwargs[name] = getattr(base, name)
    return cls(**kwargs)


def validate(cfg: RunConfig) -> RunConfig:
    """Run every section through the owning module's own checks."""
    if cfg.version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {cfg.version} (expected {CONFIG_VERSION})")
    im = cfg.image
    if im.height < 11 or im.width < 11:
        raise ConfigError("image sides must be >= 11 (SSIM window)")
    if not 1 <= im.d <= im.height * im.width:
        raise ConfigError(f"basis d must lie in [1, {im.height * im.width}]")
    dt = cfg.data
    if dt.n_id_train < 32 or dt.n_ood < 1 or dt.n_test < 2:
        raise ConfigError("split sizes too small (n_id_train >= 32, n_ood >= 1, n_test >= 2)")
    if dt.generator.components < 1 or dt.generator.spread <= 0:
        raise ConfigError("generator needs >= 1 component and positive spread")
    if cfg.oracle.k_per_class < 1 or cfg.oracle.em_iters < 1 or cfg.oracle.em_tol < 0:
        raise ConfigError("oracle section out of range")
    if cfg.pretrain.iters < 0 or cfg.pretrain.batch_size < 1 or cfg.pretrain.lr <= 0:
        raise ConfigError("pretrain section out of range")
    if any(getattr(cfg.seeds, s) is not None and getattr(cfg.seeds, s) < 0 for s in ("master",) + STAGES):
        raise ConfigError("seeds must be nonnegative")
    try:
        for deg in (dt.weak, dt.strong):
            spec = deg.spec()
            if max(spec.kernel_sizes) > min(im.height, im.width):
                raise ConfigError(f"kernel size {max(spec.kernel_sizes)} exceeds the image side")
        cfg.solver.solver()
        GateConfig(cfg.gate.alpha, 1.0, 0.0, cfg.gate.sharpness_weight)
        cfg.mix.mix()
        for r in cfg.ablate.ratios:
            cfg.mix.mix(float(r))
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.solver.condition not in ("clean", "degraded"):
        raise ConfigError("solver.condition must be 'clean' or 'degraded'")
    return cfg


def from_dict(data) -> RunConfig:
    if not isinstance(data, dict) or "version" not in data:
        raise ConfigError("config must be a JSON object with a 'version' field")
    return validate(_build(RunConfig, data, ""))


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {p}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    return from_dict(data)
