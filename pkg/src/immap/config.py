"""TOML run configuration for the command-line tools.

Sections and keys (every key optional; unknown keys are rejected)::

    [solver]  beta, sigma_min, h0, cg_tol, cg_max_iter, max_outer_iter, seed, jacobi
    [prior]   name = "wavelet" | "gaussian" | "gmm" | "identity", plus that prior's
              parameters; gaussian takes ``mean`` ("zero", "zero-filled", "sense"
              or a number) and ``variance``
    [sense]   lam, tol, max_iter
    [data]    input, normalization ("p99" | "none"), noise ("stored" | "estimate"),
              noise_floor, shape (prior sampling without input)

:func:`resolve_config` returns the nested dict with every default filled in;
that dict is what gets echoed into outputs.
"""

import copy
import sys
from dataclasses import fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .denoisers import _REGISTRY
from .estimators import NORMALIZATION_MODES
from .solver import ImmapConfig

__all__ = ["ConfigError", "default_config", "load_config", "resolve_config", "solver_config"]

GAUSSIAN_MEAN_SOURCES = ("zero", "zero-filled", "sense")
NOISE_SOURCES = ("stored", "estimate")


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


def _prior_defaults(name):
    try:
        cls = _REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown prior {name!r}; choose from {sorted(_REGISTRY)}") from None
    params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in cls().get_params().items()}
    if name == "gaussian":
        params["mean"] = "zero"
    return {"name": name, **params}


def default_config(prior="wavelet"):
    return {
        "solver": {f.name: f.default for f in fields(ImmapConfig)},
        "prior": _prior_defaults(prior),
        "sense": {"lam": 1e-2, "tol": 1e-6, "max_iter": 200},
        "data": {"input": "", "normalization": "p99", "noise": "stored", "noise_floor": 1e-3, "shape": [64, 64]},
    }


def _merge(base, section, values):
    for key, val in values.items():
        if key not in base:
            raise ConfigError(f"unknown key {section}.{key}")
        default = base[key]
        if isinstance(default, bool):
            if not isinstance(val, bool):
                raise ConfigError(f"{section}.{key} must be a boolean")
        elif isinstance(default, int) and not isinstance(val, bool) and isinstance(val, float) and val.is_integer():
            val = int(val)
        elif isinstance(default, float) and isinstance(val, int) and not isinstance(val, bool):
            val = float(val)
        base[key] = val


def resolve_config(raw=None):
    """Validate a raw (parsed TOML) mapping and fill in defaults."""
    raw = copy.deepcopy(raw or {})
    unknown = set(raw) - {"solver", "prior", "sense", "data"}
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    prior_raw = dict(raw.get("prior", {}))
    cfg = default_config(prior_raw.pop("name", "wavelet"))
    for section in ("solver", "sense", "data"):
        _merge(cfg[section], section, raw.get(section, {}))
    _merge(cfg["prior"], "prior", prior_raw)

    try:
        solver_config(cfg)
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from exc
    data = cfg["data"]
    if data["normalization"] not in NORMALIZATION_MODES:
        raise ConfigError(f"data.normalization must be one of {NORMALIZATION_MODES}")
    if data["noise"] not in NOISE_SOURCES:
        raise ConfigError(f"data.noise must be one of {NOISE_SOURCES}")
    if not data["noise_floor"] > 0:
        raise ConfigError("data.noise_floor must be positive")
    prior = cfg["prior"]
    if prior["name"] == "gaussian" and not (
        prior["mean"] in GAUSSIAN_MEAN_SOURCES or isinstance(prior["mean"], (int, float))
    ):
        raise ConfigError(f"prior.mean must be a number or one of {GAUSSIAN_MEAN_SOURCES}")
    if cfg["sense"]["lam"] < 0:
        raise ConfigError("sense.lam must be non-negative")
    return cfg


def load_config(path=None):
    """Parse and resolve a TOML file; ``None`` gives the defaults."""
    if path is None:
        return resolve_config()
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return resolve_config(raw)


def solver_config(cfg):
    return ImmapConfig(**cfg["solver"])
