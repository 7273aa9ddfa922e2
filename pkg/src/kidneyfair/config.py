"""Parameter presets and plain-text ``key = value`` configuration files."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .model import BLOOD_TYPES, BloodType, ModelParams, ParamError

# mu_A and mu_B are not published; 0.36/0.10 keeps frequencies normalized and
# satisfies mu_O < 1.5 mu_A.  gamma_H/gamma_L and n are likewise local choices.
US_2017 = ModelParams(
    n=50,
    mu_blood={BloodType.O: 0.44, BloodType.A: 0.36, BloodType.B: 0.10, BloodType.AB: 0.10},
    mu_H=0.3,
    mu_C=0.14,
    gamma_H=0.9,
    gamma_L=0.2,
    sigma=0.8,
    rho_C=0.35,
    rho_NC=0.25,
    eta_C=0.09,
)

PRESETS = {"us-2017": US_2017}

_PARAM_KEYS = ("n", "mu_H", "mu_C", "gamma_H", "gamma_L", "sigma", "rho_C", "rho_NC", "eta_C",
               "k_max", "arrivals", "crossmatch_noise")
_BLOOD_KEYS = {f"mu_{bt.value}": bt for bt in BLOOD_TYPES}


class ConfigError(ValueError):
    pass


def preset(name: str) -> ModelParams:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}") from None


def parse_kv(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def _to_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def apply_params(base: ModelParams, values: dict[str, str]) -> ModelParams:
    """Overlay parameter entries from ``values`` on ``base``; unknown keys are ignored."""
    changes: dict = {}
    mu = dict(base.mu_blood)
    for key, raw in values.items():
        if key in _BLOOD_KEYS:
            mu[_BLOOD_KEYS[key]] = float(raw)
        elif key == "k_max":
            changes[key] = int(raw)
        elif key == "arrivals":
            changes[key] = raw
        elif key == "crossmatch_noise":
            changes[key] = _to_bool(raw)
        elif key in _PARAM_KEYS:
            changes[key] = float(raw)
    changes["mu_blood"] = mu
    try:
        return dataclasses.replace(base, **changes)
    except ParamError as e:
        raise ConfigError(str(e)) from e
    except ValueError as e:
        raise ConfigError(f"bad parameter value: {e}") from e


def dump_params(p: ModelParams) -> str:
    lines = [f"n = {p.n!r}"]
    lines += [f"mu_{bt.value} = {p.mu_blood[bt]!r}" for bt in BLOOD_TYPES]
    for key in _PARAM_KEYS[1:]:
        v = getattr(p, key)
        lines.append(f"{key} = {str(v).lower() if isinstance(v, bool) else repr(v) if isinstance(v, float) else v}")
    return "\n".join(lines) + "\n"


def load_params(path: str | Path, base: ModelParams | None = None) -> ModelParams:
    values = parse_kv(Path(path).read_text())
    if base is None:
        base = preset(values.get("preset", "us-2017"))
    return apply_params(base, values)


@dataclass(frozen=True)
class ExperimentConfig:
    params: ModelParams = US_2017
    preset: str = "us-2017"
    policy: str = "sens"
    tau: int = 10
    reps: int = 1
    seed: int = 0
    output: str | None = None
    mode: str = "per-step"

    def __post_init__(self):
        from .sim import POLICIES

        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}; expected one of {', '.join(POLICIES)}")
        if self.tau < 0:
            raise ConfigError(f"tau must be >= 0, got {self.tau}")
        if self.reps < 1:
            raise ConfigError(f"reps must be >= 1, got {self.reps}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.mode not in ("per-step", "summary", "bounds"):
            raise ConfigError(f"unknown output mode {self.mode!r}")

    def dumps(self) -> str:
        head = [f"preset = {self.preset}", f"policy = {self.policy}", f"tau = {self.tau}",
                f"reps = {self.reps}", f"seed = {self.seed}", f"mode = {self.mode}"]
        if self.output is not None:
            head.append(f"output = {self.output}")
        return "\n".join(head) + "\n" + dump_params(self.params)

    @classmethod
    def loads(cls, text: str, overrides: dict[str, str] | None = None) -> "ExperimentConfig":
        """Build a config from file text; ``overrides`` (e.g. CLI flags) win over the file."""
        values = parse_kv(text)
        values.update(overrides or {})
        name = values.get("preset", "us-2017")
        params = apply_params(preset(name), values)
        try:
            return cls(
                params=params,
                preset=name,
                policy=values.get("policy", "sens"),
                tau=int(values.get("tau", 10)),
                reps=int(values.get("reps", 1)),
                seed=int(values.get("seed", 0)),
                output=values.get("output"),
                mode=values.get("mode", "per-step"),
            )
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"bad config value: {e}") from e
