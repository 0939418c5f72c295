"""Run configuration files (``key=value`` lines, ``#`` comments) and manifests.

Precedence, lowest to highest: built-in defaults, config file, command-line
flags. A manifest is a config file with every key filled in, so replaying a
run is ``lbrgm reconstruct --config run.manifest ...``.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .objective import ObjectiveConfig
from .optim import AdamConfig
from .solver import SolverConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    method: str = "lbrgm"
    iters: int = 2000
    n_init: int = 100
    seed: int = 0
    eta: float = 0.1
    beta1: float = 0.96
    beta2: float = 0.9999
    lambda_pix: float = 2e-5
    lambda_vgg: float = 2e7
    lambda_map: float = 30.0
    lambda_lat: float = 0.4
    op: str = "identity"
    noise_sigma: float = 0.0
    oracle_stopping: bool = False
    trace_every: int = 10
    feature_seed: int = 1
    eval_feature_seed: int = 2
    prior_samples: int = 10_000
    lambda_gauss: float = 1.0
    lambda_cos: float = 30.0
    model: str = ""
    obs: str = ""
    gt: str = ""

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            method=self.method, iters=self.iters, n_init=self.n_init, seed=self.seed,
            objective=ObjectiveConfig(self.lambda_pix, self.lambda_vgg, self.lambda_map, self.lambda_lat),
            adam=AdamConfig(self.eta, self.beta1, self.beta2),
            oracle_stopping=self.oracle_stopping, trace_every=self.trace_every,
            prior_samples=self.prior_samples, lambda_gauss=self.lambda_gauss, lambda_cos=self.lambda_cos,
        )

    def with_overrides(self, **values) -> "RunConfig":
        return replace(self, **{k: v for k, v in values.items() if v is not None})


_TYPES = {f.name: f.type if isinstance(f.type, str) else f.type.__name__ for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None
    return raw


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown or malformed entry {line!r}")
        values[key] = _convert(key, raw)
    return replace(base or RunConfig(), **values)


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read(), base)


def dump_config(cfg: RunConfig) -> str:
    lines = ["# lbrgm run manifest"]
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, float):
            value = repr(value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"
