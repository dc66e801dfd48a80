"""Run configuration: INI files merged with command-line overrides."""

from __future__ import annotations

import configparser
import os
from dataclasses import asdict, dataclass, field, fields, replace

from .inference import FIXABLE, SamplerConfig
from .io import STEPS
from .model import Hyperparameters

OUTPUT_ROOT_ENV = "DYNLFM_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    input: str | None = None
    output: str | None = None
    preprocess: tuple[str, ...] = ()
    chains: int = 1
    holdout_rows: float = 0.0
    holdout_dims: int = 0

    def __post_init__(self):
        self.preprocess = tuple(self.preprocess)
        bad = [s for s in self.preprocess if s not in STEPS]
        if bad:
            raise ConfigError(f"unknown preprocessing steps {bad}; choose from {STEPS}")
        if "stft" in self.preprocess[1:]:
            raise ConfigError("stft must be the first preprocessing step")
        if self.chains < 1:
            raise ConfigError("chains must be >= 1")
        if not 0 <= self.holdout_rows < 1:
            raise ConfigError("holdout_rows must lie in [0, 1)")
        if self.holdout_dims < 0 or (self.holdout_rows > 0) != (self.holdout_dims > 0):
            raise ConfigError("holdout_rows and holdout_dims must be set together")

    @property
    def model(self):
        return self.sampler.model

    def to_dict(self) -> dict:
        """Plain, JSON-ready view used for hashing and manifests."""
        s = asdict(self.sampler)
        s["regime"] = self.sampler.regime.value
        s["model"] = self.sampler.model.value
        s["priors"] = {k: (v.tolist() if hasattr(v, "tolist") else v) for k, v in s["priors"].items()}
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "sampler"}
        out["preprocess"] = list(self.preprocess)
        out["sampler"] = s
        return out


_SAMPLER_KEYS = {"regime": str, "k_max": int, "n_iters": int, "burn_in": int, "thin": int,
                 "initial_bracket_width": int, "seed": int, "model": str, "init": str,
                 "init_density": float}
_RUN_KEYS = {"input": str, "output": str, "chains": int, "holdout_rows": float, "holdout_dims": int}
_PRIOR_KEYS = [f.name for f in fields(Hyperparameters) if f.name != "rho"]


def _convert(section: str, key: str, raw: str, kind):
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot read {raw!r} as {kind.__name__}") from None


def read_ini(path: str | os.PathLike) -> dict:
    """Flatten an INI file into override keys understood by :func:`build_config`."""
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    out: dict = {}
    allowed = {"run": {**_RUN_KEYS, "preprocess": str}, "sampler": _SAMPLER_KEYS,
               "priors": dict.fromkeys(_PRIOR_KEYS, float), "fixed": dict.fromkeys(FIXABLE, float)}
    for section in parser.sections():
        if section not in allowed:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in allowed[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            if section == "run" and key == "preprocess":
                out[key] = tuple(s.strip() for s in raw.split(",") if s.strip())
            elif section in ("priors", "fixed"):
                out.setdefault(section, {})[key] = _convert(section, key, raw, float)
            else:
                out[key] = _convert(section, key, raw, allowed[section][key])
    return out


def build_config(overrides: dict) -> RunConfig:
    """Defaults, then ``overrides`` (config-file keys with CLI flags already layered on top)."""
    try:
        priors = Hyperparameters(**overrides.get("priors", {}))
        skw = {k: overrides[k] for k in _SAMPLER_KEYS if overrides.get(k) is not None}
        sampler = SamplerConfig(priors=priors, fixed_hypers=dict(overrides.get("fixed", {})), **skw)
        rkw = {k: overrides[k] for k in (*_RUN_KEYS, "preprocess") if overrides.get(k) is not None}
        return RunConfig(sampler=sampler, **rkw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def resolve_output(path: str | os.PathLike) -> str:
    """Place relative output paths under ``$DYNLFM_OUTPUT_ROOT`` when it is set."""
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return str(path)


def with_sampler(cfg: RunConfig, **changes) -> RunConfig:
    return replace(cfg, sampler=replace(cfg.sampler, **changes))
