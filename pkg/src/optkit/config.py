"""Flat dotted-key experiment configuration.

One experiment per file. Lines are `key = value`, `#` starts a comment,
blank lines are ignored. CLI `--override key=value` flags are applied after
the file, last writer wins. Unknown keys are rejected with their full path.

Example::

    objective.name = quadratic
    objective.dim = 20
    objective.n_samples = 4096
    objective.noise_scale = 3.0
    objective.seed = 7
    optimizer.kind = adasam
    optimizer.gamma = 0.05
    run.steps = 2000
    run.batch_size = 8
    run.seeds = 0,1,2,3,4,5,6,7,8,9
    output.path = out/quadratic
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .objectives import OBJECTIVE_NAMES, StochasticObjective, make_objective
from .optimizers import OPTIMIZER_KINDS, OptimizerConfig

__all__ = [
    "ExperimentSpec",
    "parse_config_text",
    "load_config",
    "apply_overrides",
    "build_spec",
]

LR_SCALINGS = ("none", "sqrt_batch")


def parse_config_text(text: str) -> dict[str, str]:
    """Parse config lines into a raw key -> string-value mapping."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        raw[key.strip()] = value.strip()
    return raw


def load_config(path: str | Path) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text)


def apply_overrides(raw: dict[str, str], overrides: list[str]) -> dict[str, str]:
    """Merge `key=value` override strings over a raw mapping (last wins)."""
    merged = dict(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, _, value = item.partition("=")
        merged[key.strip()] = value.strip()
    return merged


def _as_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None


def _as_float(key: str, value: str) -> float:
    try:
        out = float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    if math.isnan(out) or math.isinf(out):
        raise ConfigError(f"{key}: value must be finite, got {value!r}")
    return out


def _as_bool(key: str, value: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected true/false, got {value!r}")


def _as_int_list(key: str, value: str) -> tuple[int, ...]:
    items = [part.strip() for part in value.split(",") if part.strip()]
    if not items:
        raise ConfigError(f"{key}: expected a comma-separated integer list")
    return tuple(_as_int(key, item) for item in items)


def _as_float_list(key: str, value: str) -> tuple[float, ...]:
    items = [part.strip() for part in value.split(",") if part.strip()]
    if not items:
        raise ConfigError(f"{key}: expected a comma-separated number list")
    return tuple(_as_float(key, item) for item in items)


def _as_choice(key: str, value: str, choices: tuple[str, ...]) -> str:
    if value not in choices:
        raise ConfigError(f"{key}: expected one of {choices}, got {value!r}")
    return value


# key -> coercion kind; the single source of truth for valid config keys.
_KEY_KINDS: dict[str, str] = {
    "objective.name": "objective_name",
    "objective.dim": "int",
    "objective.n_samples": "int",
    "objective.noise_scale": "float",
    "objective.noise_sigma": "float",
    "objective.margin_noise": "float",
    "objective.seed": "int",
    "objective.box_radius": "float",
    "optimizer.kind": "optimizer_kind",
    "optimizer.gamma": "float",
    "optimizer.rho": "float",
    "optimizer.beta1": "float",
    "optimizer.beta2": "float",
    "optimizer.epsilon": "float",
    "optimizer.use_max_clamp": "bool",
    "optimizer.perturb_norm_floor": "float",
    "run.steps": "int",
    "run.batch_size": "int",
    "run.seeds": "int_list",
    "run.lr_scaling": "lr_scaling",
    "run.x0": "float_list",
    "run.strict": "bool",
    "run.record_stride": "int",
    "output.path": "str",
    "speedup.batch_sizes": "int_list",
    "speedup.threshold": "float",
    "speedup.max_steps": "int",
    "speedup.ref_batch": "int",
    "ablation.adaptive_gamma": "float",
}

# objective.name -> (config key suffix -> factory kwarg, required suffixes)
_OBJECTIVE_PARAM_MAP: dict[str, tuple[dict[str, str], tuple[str, ...]]] = {
    "quadratic": (
        {
            "dim": "d",
            "n_samples": "n_samples",
            "noise_scale": "noise_scale",
            "seed": "seed",
            "box_radius": "box_radius",
        },
        ("dim", "n_samples"),
    ),
    "rosenbrock": ({"seed": "seed", "noise_sigma": "noise_sigma"}, ()),
    "logreg": (
        {
            "dim": "d",
            "n_samples": "n_samples",
            "seed": "seed",
            "margin_noise": "margin_noise",
        },
        ("dim", "n_samples"),
    ),
}


def _coerce(key: str, value: str):
    kind = _KEY_KINDS[key]
    if kind == "int":
        return _as_int(key, value)
    if kind == "float":
        return _as_float(key, value)
    if kind == "bool":
        return _as_bool(key, value)
    if kind == "int_list":
        return _as_int_list(key, value)
    if kind == "float_list":
        return _as_float_list(key, value)
    if kind == "objective_name":
        return _as_choice(key, value, OBJECTIVE_NAMES)
    if kind == "optimizer_kind":
        return _as_choice(key, value, tuple(sorted(OPTIMIZER_KINDS)))
    if kind == "lr_scaling":
        return _as_choice(key, value, LR_SCALINGS)
    return value  # plain string


@dataclass(frozen=True)
class ExperimentSpec:
    """A fully validated experiment description."""

    objective_name: str
    objective_params: dict = field(hash=False)
    optimizer_kind: str
    optimizer: OptimizerConfig
    steps: int
    batch_size: int
    seeds: tuple[int, ...]
    lr_scaling: str
    x0: tuple[float, ...] | None
    output_path: Path | None
    strict: bool
    record_stride: int
    speedup_batch_sizes: tuple[int, ...]
    speedup_threshold: float | None
    speedup_max_steps: int
    speedup_ref_batch: int
    ablation_adaptive_gamma: float | None

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ConfigError("run.seeds must be nonempty")
        if self.steps < 1:
            raise ConfigError("run.steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("run.batch_size must be >= 1")

    def make_objective(self) -> StochasticObjective:
        return make_objective(self.objective_name, self.objective_params)

    def gamma_for_batch(self, batch_size: int) -> float:
        """Base learning rate, optionally scaled as sqrt(b / b_ref)."""
        if self.lr_scaling == "sqrt_batch":
            return self.optimizer.gamma * math.sqrt(
                batch_size / self.speedup_ref_batch
            )
        return self.optimizer.gamma

    def start_vector(self, dim: int) -> tuple[float, ...] | None:
        """Explicit start (scalar values broadcast to `dim`) or None."""
        if self.x0 is None:
            return None
        if len(self.x0) == 1 and dim > 1:
            return self.x0 * dim
        if len(self.x0) != dim:
            raise ConfigError(
                f"run.x0 has {len(self.x0)} entries but the objective has "
                f"dimension {dim}"
            )
        return self.x0


def build_spec(raw: dict[str, str]) -> ExperimentSpec:
    """Coerce and validate a raw key mapping into an ExperimentSpec."""
    unknown = sorted(set(raw) - set(_KEY_KINDS))
    if unknown:
        raise ConfigError(f"unknown config key: {unknown[0]}")
    values = {key: _coerce(key, value) for key, value in raw.items()}

    if "objective.name" not in values:
        raise ConfigError("objective.name is required")
    if "optimizer.gamma" not in values:
        raise ConfigError("optimizer.gamma is required")
    objective_name = values["objective.name"]

    param_map, required = _OBJECTIVE_PARAM_MAP[objective_name]
    objective_params: dict = {}
    for key, value in values.items():
        section, _, suffix = key.partition(".")
        if section != "objective" or suffix == "name":
            continue
        if suffix not in param_map:
            raise ConfigError(
                f"{key} does not apply to objective {objective_name!r}"
            )
        objective_params[param_map[suffix]] = value
    for suffix in required:
        if param_map[suffix] not in objective_params:
            raise ConfigError(f"objective.{suffix} is required for {objective_name}")
    objective_params.setdefault("seed", 0)
    if objective_name == "quadratic":
        objective_params.setdefault("noise_scale", 1.0)
    if objective_name == "rosenbrock":
        objective_params.setdefault("noise_sigma", 1.0)

    try:
        optimizer = OptimizerConfig(
            gamma=values["optimizer.gamma"],
            rho=values.get("optimizer.rho", 0.005),
            beta1=values.get("optimizer.beta1", 0.9),
            beta2=values.get("optimizer.beta2", 0.999),
            epsilon=values.get("optimizer.epsilon", 1e-4),
            use_max_clamp=values.get("optimizer.use_max_clamp", True),
            perturb_norm_floor=values.get("optimizer.perturb_norm_floor", 1e-12),
        )
    except ValueError as exc:
        raise ConfigError(f"optimizer: {exc}") from exc

    output_path = values.get("output.path")
    return ExperimentSpec(
        objective_name=objective_name,
        objective_params=objective_params,
        optimizer_kind=values.get("optimizer.kind", "adasam"),
        optimizer=optimizer,
        steps=values.get("run.steps", 1000),
        batch_size=values.get("run.batch_size", 1),
        seeds=values.get("run.seeds", (0,)),
        lr_scaling=values.get("run.lr_scaling", "none"),
        x0=values.get("run.x0"),
        output_path=Path(output_path) if output_path is not None else None,
        strict=values.get("run.strict", False),
        record_stride=values.get("run.record_stride", 1),
        speedup_batch_sizes=values.get("speedup.batch_sizes", (1, 2, 4, 8, 16, 32)),
        speedup_threshold=values.get("speedup.threshold"),
        speedup_max_steps=values.get("speedup.max_steps", 20000),
        speedup_ref_batch=values.get("speedup.ref_batch", 1),
        ablation_adaptive_gamma=values.get("ablation.adaptive_gamma"),
    )
