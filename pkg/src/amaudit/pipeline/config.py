"""Declarative run configuration: one TOML file plus command-line overrides."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..attribution import METHOD_IDS, NoiseConfig, ScoreCamConfig
from ..consistency import ClampConfig
from ..errors import ConfigError, ValidationError
from ..faithfulness import DELETION, INSERTION, PerturbationConfig

CONSISTENCY = "consistency"
ALIGNMENT = "alignment"
SHARING = "sharing"
METRICS = (CONSISTENCY, INSERTION, DELETION, ALIGNMENT, SHARING)


@dataclass(frozen=True)
class PerturbationSettings:
    """Shared step/blur settings plus the baseline used by each curve mode."""

    num_steps: int = 100
    blur_kernel: int = 11
    blur_sigma: float = 5.0
    insertion_baseline: str = "blur"
    deletion_baseline: str = "black"

    def config(self, mode: str) -> PerturbationConfig:
        baseline = self.insertion_baseline if mode == INSERTION else self.deletion_baseline
        return PerturbationConfig(mode, self.num_steps, baseline, self.blur_kernel, self.blur_sigma)

    def __post_init__(self):
        self.config(INSERTION)
        self.config(DELETION)


@dataclass(frozen=True)
class RunConfig:
    """Everything that affects results. ``output_dir`` only says where they go.

    ``model_weights`` takes precedence over ``fixture_seed``; with neither, the
    fixture is built (or reused) inside ``dataset_path`` with seed ``seed``.
    """

    dataset_path: Path
    methods: tuple[str, ...] = METHOD_IDS
    metrics: tuple[str, ...] = METRICS
    annotation_path: Path | None = None
    fixture_seed: int | None = None
    model_weights: Path | None = None
    layer_id: str | None = None
    split: str | None = "test"
    sample_limit: int | None = None
    seed: int = 0
    perturbation: PerturbationSettings = field(default_factory=PerturbationSettings)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    scorecam: ScoreCamConfig = field(default_factory=ScoreCamConfig)
    clamp: ClampConfig = field(default_factory=ClampConfig)
    workers: int = 1
    output_dir: Path = Path("amaudit-out")

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("methods must be non-empty")
        unknown = [m for m in self.methods if m not in METHOD_IDS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; known: {list(METHOD_IDS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods must not repeat")
        bad = [m for m in self.metrics if m not in METRICS]
        if bad:
            raise ConfigError(f"unknown metrics {bad}; known: {list(METRICS)}")
        if CONSISTENCY in self.metrics and len(self.methods) < 2:
            raise ConfigError("the consistency metric needs at least two methods")
        if self.sample_limit is not None and self.sample_limit < 1:
            raise ConfigError("sample_limit must be a positive integer")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.noise.seed != self.seed:
            # one seed drives both sample selection and noise
            object.__setattr__(self, "noise", replace(self.noise, seed=self.seed))

    @property
    def mask_dir(self) -> Path:
        return self.annotation_path if self.annotation_path is not None else self.dataset_path / "masks"

    def to_dict(self) -> dict:
        """Echo for the report.

        output_dir and workers do not change results and are left out, so
        reruns elsewhere or with another pool size compare equal.
        """
        return {
            "dataset_path": str(self.dataset_path),
            "annotation_path": None if self.annotation_path is None else str(self.annotation_path),
            "fixture_seed": self.fixture_seed,
            "model_weights": None if self.model_weights is None else str(self.model_weights),
            "layer_id": self.layer_id,
            "methods": list(self.methods),
            "metrics": list(self.metrics),
            "split": self.split,
            "sample_limit": self.sample_limit,
            "seed": self.seed,
            "perturbation": vars(self.perturbation).copy(),
            "noise": {"num_samples": self.noise.num_samples, "sigma_fraction": self.noise.sigma_fraction},
            "scorecam": vars(self.scorecam).copy(),
            "clamp": {"epsilon": self.clamp.epsilon},
        }


def _path(value, base: Path) -> Path | None:
    if value is None:
        return None
    p = Path(value).expanduser()
    return p if p.is_absolute() else (base / p)


def _list(value, name: str) -> tuple[str, ...]:
    if isinstance(value, str):
        value = [v.strip() for v in value.split(",") if v.strip()]
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{name} must be a list of strings")
    return tuple(value)


_TOP_KEYS = {"dataset_path", "annotation_path", "fixture_seed", "model_weights", "layer_id", "methods",
             "metrics", "split", "sample_limit", "seed", "workers", "output_dir",
             "perturbation", "noise", "scorecam", "clamp"}


def config_from_dict(data: Mapping[str, Any], base_dir: Path | str = ".",
                     overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Build a RunConfig; relative paths resolve against ``base_dir``.

    ``overrides`` (methods, metrics, seed, sample_limit, output_dir) replace
    file values when not None.
    """
    data = dict(data)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    if "dataset_path" not in data:
        raise ConfigError("dataset_path is required")
    base = Path(base_dir).resolve()
    # overrides come from the command line and resolve against the working directory
    out_base = Path.cwd() if (overrides or {}).get("output_dir") is not None else base
    kwargs: dict[str, Any] = {
        "dataset_path": _path(data["dataset_path"], base),
        "annotation_path": _path(data.get("annotation_path"), base),
        "model_weights": _path(data.get("model_weights"), base),
        "output_dir": _path(data.get("output_dir", "amaudit-out"), out_base),
    }
    for key in ("fixture_seed", "layer_id", "split", "sample_limit", "seed", "workers"):
        if key in data:
            kwargs[key] = data[key]
    if "methods" in data:
        kwargs["methods"] = _list(data["methods"], "methods")
    if "metrics" in data:
        kwargs["metrics"] = _list(data["metrics"], "metrics")
    if "seed" in data.get("noise", {}):
        raise ConfigError("set the top-level seed; it also seeds the noise")
    try:
        for key, cls in (("perturbation", PerturbationSettings), ("noise", NoiseConfig),
                         ("scorecam", ScoreCamConfig), ("clamp", ClampConfig)):
            if key in data:
                kwargs[key] = cls(**data[key])
        return RunConfig(**kwargs)
    except (TypeError, ValidationError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def load_config(path, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc
    return config_from_dict(data, path.parent, overrides)
