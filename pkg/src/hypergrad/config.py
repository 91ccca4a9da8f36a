"""Experiment configs: JSON schema validation plus the semantic checks the schema cannot express."""

import copy
import json
from importlib import resources

import jsonschema

from .engines import EngineConfig
from .outer import OuterConfig


class ConfigError(ValueError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"config error at {path or '<root>'}: {message}")


def load_schema():
    return json.loads(resources.files("hypergrad").joinpath("config.schema.json").read_text())


def _path(error):
    return ".".join(str(p) for p in error.absolute_path)


def _fill_defaults(obj, schema):
    for key, sub in schema.get("properties", {}).items():
        if key in obj and isinstance(obj[key], dict):
            _fill_defaults(obj[key], sub)
        elif key not in obj and "default" in sub:
            obj[key] = copy.deepcopy(sub["default"])


def validate(raw):
    """Validate a config dict and return a copy with defaults filled in.

    Raises :class:`ConfigError` naming the dotted field path of the first problem.
    """
    schema = load_schema()
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(raw), key=lambda e: (len(e.absolute_path), _path(e)))
    if errors:
        err = errors[0]
        path = _path(err)
        if err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            path = ".".join(filter(None, [path, extra[0] if extra else ""]))
        raise ConfigError(path, err.message)
    cfg = copy.deepcopy(raw)
    _fill_defaults(cfg, schema)
    for section in ("unroll", "diagnostics", "output"):
        cfg.setdefault(section, {})
        _fill_defaults(cfg[section], schema["properties"][section])
    cfg["problem"].setdefault("parameters", {})

    eng = cfg["engine"]
    if eng["mode"] in ("k_rmd", "neumann") and "K" not in eng:
        raise ConfigError("engine.K", f"mode {eng['mode']} requires K")
    T = cfg["unroll"].get("T")
    if T is not None and eng["mode"] == "k_rmd" and eng["K"] > T + 1:
        raise ConfigError("engine.K", f"K={eng['K']} exceeds T+1={T + 1}")
    if T is not None and "checkpoint_interval" in eng and eng["checkpoint_interval"] > max(T, 1):
        raise ConfigError("engine.checkpoint_interval", "interval must not exceed T")
    return cfg


def load(path):
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"invalid JSON: {exc}") from exc
    return validate(raw)


def engine_config(cfg):
    eng = cfg["engine"]
    return EngineConfig(mode=eng["mode"], K=eng.get("K"), cg_iters=eng["cg_iters"], cg_tol=eng["cg_tol"],
                        checkpoint_interval=eng.get("checkpoint_interval"), fmd_cap=eng["fmd_cap"])


def outer_config(cfg):
    out = cfg["outer"]
    return OuterConfig(
        optimizer=out["optimizer"], eta0=out["eta0"], schedule=out["schedule"], iters=out["iters"],
        normalize_first_update=out.get("normalize_first_update"),
        early_stop_patience=out.get("early_stop_patience"),
        record_full_gradient_every=cfg["diagnostics"].get("record_full_gradient_every"))
