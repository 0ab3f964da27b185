"""INI configuration shared by the command line front end.

Every recognised key and its default is listed in :data:`DEFAULTS`; any other
section or key is an error.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, replace
from typing import Optional

from .campaign import CampaignConfig
from .harness import Thresholds
from .kernel import KernelConfig
from .targets import FAULT_TYPES
from .workloads import (
    ADPCM_SAMPLES, CUBIC_INPUTS, DEFAULT_WORKLOADS, FFT_POINTS, HUFF_CORPUS_BYTES,
    SHA_INPUT_BYTES,
    WorkloadSpec,
)

__all__ = ["DEFAULTS", "ConfigError", "Settings", "load_config", "default_config_text"]

_STRIDE_KEYS = {w.id: f"{w.id.lower()}_yield_stride" for w in DEFAULT_WORKLOADS}

DEFAULTS = {
    "kernel": {
        "tick_rate_hz": "1000",
        "max_priorities": "7",
        "image_capacity": "65536",
        "traversal_budget_factor": "10",
    },
    "workloads": {
        **{_STRIDE_KEYS[w.id]: str(w.yield_stride) for w in DEFAULT_WORKLOADS},
        "live": "false",
    },
    "thresholds": {
        "delay_fraction": "0.05",
        "hang_multiplier": "3.0",
    },
    "campaign": {
        "fault_types": "transient, permanent",
        "confidence": "0.99",
        "margin": "0.05",
        "p": "0.5",
        "population": "inf",
        "n_per_location": "auto",
        "window_fraction": "0.1",
        "seed": "0",
        "workers": "4",
        "out": "out",
        "targets": "all",
        "stuck_value": "complement",
    },
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Settings:
    kernel: KernelConfig
    workloads: tuple
    live: bool
    thresholds: Thresholds
    campaign: CampaignConfig
    out: str

    def with_overrides(self, seed=None, workers=None, out=None) -> "Settings":
        camp = self.campaign
        if seed is not None:
            camp = replace(camp, seed=seed)
        if workers is not None:
            if workers < 1:
                raise ConfigError("--workers must be at least 1")
            camp = replace(camp, workers=workers)
        out = self.out if out is None else out
        return replace(self, campaign=replace(camp, out_dir=out), out=out)


_NOTES = {
    "workloads": [
        "# input sizes are fixed: SHA %d bytes, FFT %d points, CUBIC %d equations,"
        % (SHA_INPUT_BYTES, FFT_POINTS, len(CUBIC_INPUTS)),
        "# HUFF_DEC %d-byte corpus, ADPCM_ENC %d samples" % (HUFF_CORPUS_BYTES, ADPCM_SAMPLES),
        "# a stride is the work done between two yields",
    ],
    "campaign": [
        "# population = inf or a fault-space size; n_per_location = auto or a count",
        "# stuck_value = complement, 0 or 1 (permanent faults only)",
    ],
}


def default_config_text() -> str:
    lines = []
    for section, keys in DEFAULTS.items():
        lines.append(f"[{section}]")
        lines += _NOTES.get(section, [])
        lines += [f"{k} = {v}" for k, v in keys.items()]
        lines.append("")
    return "\n".join(lines)


def _get(parser, section, key, conv):
    raw = parser.get(section, key)
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None


def _bool(raw):
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true or false")


def _opt_int(raw):
    return None if raw.strip().lower() == "auto" else int(raw)


def _population(raw):
    return None if raw.strip().lower() in ("inf", "infinite") else float(raw)


def _stuck(raw):
    low = raw.strip().lower()
    if low == "complement":
        return None
    if low in ("0", "1"):
        return int(low)
    raise ValueError("expected 0, 1 or complement")


def _fault_types(raw):
    types = tuple(t.strip() for t in raw.split(",") if t.strip())
    bad = [t for t in types if t not in FAULT_TYPES]
    if bad or not types:
        raise ValueError(f"fault types must be drawn from {FAULT_TYPES}")
    return types


def _targets(raw):
    if raw.strip().lower() == "all":
        return None
    return tuple(t.strip() for t in raw.split(",") if t.strip())


def load_config(path: Optional[str] = None) -> Settings:
    """Parse ``path`` (or only the defaults when None)."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_dict(DEFAULTS)
    if path is not None:
        user = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                user.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
        for section in user.sections():
            if section not in DEFAULTS:
                raise ConfigError(f"unknown section [{section}]")
            for key, value in user.items(section, raw=True):
                if key not in DEFAULTS[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                parser.set(section, key, value)

    try:
        kernel = KernelConfig(
            tick_rate_hz=_get(parser, "kernel", "tick_rate_hz", int),
            max_priorities=_get(parser, "kernel", "max_priorities", int),
            image_capacity=_get(parser, "kernel", "image_capacity", int),
            traversal_budget_factor=_get(parser, "kernel", "traversal_budget_factor", int),
        )
        workloads = tuple(
            WorkloadSpec(w.id, w.priority, _get(parser, "workloads", _STRIDE_KEYS[w.id], int),
                         w.stack_words)
            for w in DEFAULT_WORKLOADS)
        for w in workloads:
            if w.yield_stride < 1:
                raise ConfigError(f"[workloads] {_STRIDE_KEYS[w.id]} must be at least 1")
        thresholds = Thresholds(_get(parser, "thresholds", "delay_fraction", float),
                                _get(parser, "thresholds", "hang_multiplier", float))
        out = parser.get("campaign", "out")
        camp = CampaignConfig(
            fault_types=_get(parser, "campaign", "fault_types", _fault_types),
            confidence=_get(parser, "campaign", "confidence", float),
            margin=_get(parser, "campaign", "margin", float),
            p=_get(parser, "campaign", "p", float),
            population=_get(parser, "campaign", "population", _population),
            n_per_location=_get(parser, "campaign", "n_per_location", _opt_int),
            window_fraction=_get(parser, "campaign", "window_fraction", float),
            thresholds=thresholds,
            seed=_get(parser, "campaign", "seed", int),
            workers=_get(parser, "campaign", "workers", int),
            out_dir=out,
            targets=_get(parser, "campaign", "targets", _targets),
            stuck_value=_get(parser, "campaign", "stuck_value", _stuck),
        )
        if not 0 < camp.window_fraction <= 1:
            raise ConfigError("[campaign] window_fraction must lie in (0, 1]")
        if camp.population is not None and not math.isinf(camp.population) and camp.population < 1:
            raise ConfigError("[campaign] population must be at least 1")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return Settings(kernel, workloads, _get(parser, "workloads", "live", _bool), thresholds,
                    camp, out)
