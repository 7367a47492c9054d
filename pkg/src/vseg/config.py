"""Layered run configuration: defaults < config file < command-line flags.

Config files are flat UTF-8 ``key=value`` lines; ``#`` starts a comment
line. Keys may use dashes or underscores.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .imageio import read_kv


def parse_tiles(text) -> tuple:
    if isinstance(text, (tuple, list)):
        vals = tuple(int(v) for v in text)
    else:
        parts = str(text).lower().replace(",", "x").split("x")
        try:
            vals = tuple(int(p) for p in parts)
        except ValueError:
            raise ConfigError(f"tile grid must look like 8x8, got {text!r}") from None
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2 or min(vals) < 1:
        raise ConfigError(f"tile grid must be two positive integers, got {text!r}")
    return vals


def parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


@dataclass(frozen=True)
class Option:
    default: object
    parse: object
    help: str
    invented: bool = False


OPTIONS = {
    "seed": Option(0, int, "random seed for initialisation, sampling, dropout and shuffling", True),
    "epochs": Option(60, int, "training epochs"),
    "batch_size": Option(32, int, "patches per optimizer step"),
    "lr": Option(1e-4, float, "RMSprop learning rate"),
    "momentum": Option(0.7, float, "RMSprop momentum"),
    "dropout": Option(0.7, float, "dropout drop probability after each 3x3 convolution"),
    "rho": Option(0.9, float, "RMSprop squared-gradient decay", True),
    "patches": Option(120_000, int, "number of training patches to sample", True),
    "val_fraction": Option(0.1, float, "fraction of sampled patches held out for validation", True),
    "use_fov": Option(True, parse_bool, "only sample patch centres inside the field of view", True),
    "stride": Option(7, int, "tiling stride for whole-image prediction", True),
    "threshold": Option(0.5, float, "vessel probability threshold", True),
    "aggregate": Option("prob", str, "overlap aggregation: prob or logit", True),
    "gamma": Option(1.2, float, "gamma exponent", True),
    "clahe_clip": Option(2.0, float, "CLAHE clip limit (multiple of a flat histogram bin)", True),
    "clahe_tiles": Option((8, 8), parse_tiles, "CLAHE tile grid, e.g. 8x8", True),
    "stats_mode": Option("dataset", str, "z-score statistics: dataset or image", True),
    "summary": Option("pooled", str, "headline metrics: pooled (all FOV pixels) or per_image (mean of "
                      "per-image values, added as an extra CSV row)", True),
    "roc_max_points": Option(10001, int, "maximum rows in ROC CSV output (0 keeps all)", True),
}

PATH_KEYS = ("data", "prep", "out")


def _norm(key: str) -> str:
    return key.strip().replace("-", "_")


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    raw = read_kv(path)
    out = {}
    for key, value in raw.items():
        k = _norm(key)
        if k in PATH_KEYS:
            out[k] = value
        elif k in OPTIONS:
            out[k] = _parse(k, value)
        else:
            raise ConfigError(f"{path}: unknown config key {key!r}")
    return out


def _parse(key, value):
    try:
        return OPTIONS[key].parse(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from None


def resolve(config_file=None, flags: dict | None = None) -> dict:
    """Merge defaults, then the config file, then explicitly given flags."""
    eff = {k: o.default for k, o in OPTIONS.items()}
    if config_file:
        eff.update(load_config_file(config_file))
    for key, value in (flags or {}).items():
        if value is None:
            continue
        k = _norm(key)
        eff[k] = _parse(k, value) if k in OPTIONS else value
    if eff["aggregate"] not in ("prob", "logit"):
        raise ConfigError(f"aggregate must be prob or logit, got {eff['aggregate']!r}")
    if eff["summary"] not in ("pooled", "per_image"):
        raise ConfigError(f"summary must be pooled or per_image, got {eff['summary']!r}")
    if eff["stats_mode"] not in ("dataset", "image"):
        raise ConfigError(f"stats_mode must be dataset or image, got {eff['stats_mode']!r}")
    return eff
