"""JSON run-configuration parsing and output manifests.

Every field is optional and falls back to the package defaults; unknown
keys are rejected so typos cannot silently revert a setting. The parsed
config is echoed verbatim into the output manifest together with its hash
and the seed, making any run re-executable from its output directory.
"""
from __future__ import annotations

import hashlib
import json
import os

from .controllers import ControllerKind
from .errors import ConfigError
from .evaluation import EvalConfig
from .evolution import EvoConfig, default_sweep_values

_EVO_KEYS = {"controller", "population_size", "generations", "tournament_size",
             "morph_rate", "control_rate", "growth_p", "seed", "jobs"}
_EVAL_KEYS = {"settle_time", "control_steps", "control_dt", "physics_dt",
              "early_check_from", "stall_window", "stall_epsilon",
              "sine_frequency", "drop_height", "seed"}
_SWEEP_KEYS = {"morph_values", "control_values", "repeats"}


def _check_keys(d: dict, allowed: set, where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} config keys: {sorted(unknown)}")


def parse_run_config(doc: dict, allow_sweep: bool = False):
    """Returns (EvoConfig, EvalConfig[, sweep dict]) from a config document."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    doc = dict(doc)
    eval_doc = doc.pop("evaluation", {})
    if not isinstance(eval_doc, dict):
        raise ConfigError("'evaluation' must be an object")
    sweep_doc = {k: doc.pop(k) for k in list(doc) if k in _SWEEP_KEYS}
    _check_keys(doc, _EVO_KEYS, "run")
    _check_keys(eval_doc, _EVAL_KEYS, "evaluation")
    try:
        evo = EvoConfig(**doc)
        ev = EvalConfig(**eval_doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not allow_sweep:
        if sweep_doc:
            raise ConfigError(f"unknown run config keys: {sorted(sweep_doc)}")
        return evo, ev
    sweep = {
        "morph_values": sweep_doc.get("morph_values", default_sweep_values()),
        "control_values": sweep_doc.get("control_values", default_sweep_values()),
        "repeats": sweep_doc.get("repeats", 4),
    }
    return evo, ev, sweep


def load_config_file(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def config_hash(doc: dict) -> str:
    return hashlib.sha256(
        json.dumps(doc, sort_keys=True).encode()).hexdigest()


def write_manifest(out_dir: str, doc: dict, seed: int) -> None:
    from . import __version__
    manifest = {
        "config": doc,
        "seed": seed,
        "config_sha256": config_hash(doc),
        "version": __version__,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
