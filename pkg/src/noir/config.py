"""Run configuration: JSON with defaults, validation and ``--set`` overrides.

INR and operator sections use the column names of the published
configuration tables (``#HL``, ``HS``, ``Lat``, ``LRL``, ``LR`` ...).
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .inr import SirenConfig
from .meta import MetaConfig
from .operator import OperatorConfig
from .errors import ConfigError
from .tasks import TaskSpec


def _inr_defaults(out: int, last: str) -> dict:
    return {"In": 2, "Out": out, "#HL": 6, "HS": 256, "HAct": "Sine", "LAct": last, "Lat": 64,
            "#HHL": 1, "HHS": 64, "LRL": 1e-2, "LR": 5e-6, "Opt": "AdamW", "WD": 0.0, "omega0": 30.0}


DEFAULTS = {
    "seed": 0,
    "task": {"kind": "seg2d", "resolution": 48, "n_samples": 320, "noise": 0.02,
             "shape_min": 1, "shape_max": 3, "splits": [0.8, 0.1, 0.1]},
    "input_inr": _inr_defaults(1, "Sigmoid"),
    "output_inr": _inr_defaults(2, "Softmax"),
    "meta": {"inner_steps": 5, "test_inner_steps": 10, "batch_size": 1, "points_per_iter": 2048,
             "max_epochs": 1000, "patience": 50},
    "operator": {"In": 64, "Out": 64, "#HL": 1, "HD": 128, "Act": "SiLU", "Res": True, "LR": 1e-4,
                 "Opt": "AdamW", "WD": 1e-4, "Dropout": 0.0, "batch_size": 32, "max_epochs": 1000,
                 "patience": 50},
    "ablation": {"ridge_lambda": 1e-3},
    "reno": {"resolutions": "16,24,32,48", "render_pgm": False},
}

CHOICES = {
    "HAct": ("Sine",),
    "LAct": ("Sigmoid", "Softmax", "None"),
    "Act": ("SiLU", "ReLU"),
    "Opt": ("AdamW",),
    "kind": ("seg2d", "multiseg2d", "complete2d", "translate2d"),
}


def _check_type(key: str, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, list):
        ok = isinstance(value, list) and all(isinstance(v, (int, float)) for v in value)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")
    leaf = key.rsplit(".", 1)[-1]
    if leaf in CHOICES and value not in CHOICES[leaf]:
        raise ConfigError(f"{key}: {value!r} is not one of {CHOICES[leaf]}")
    return value


def _merge(base: dict, update: dict, where: str, source: str) -> None:
    for key, value in update.items():
        path = f"{where}.{key}" if where else key
        if key not in base:
            raise ConfigError(f"unknown key {path!r} in {source}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{path}: expected an object in {source}")
            _merge(base[key], value, path, source)
        else:
            base[key] = _check_type(path, value, base[key])


def parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError(f"--set expects key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


class RunConfig:
    def __init__(self, data: dict | None = None):
        self.data = copy.deepcopy(DEFAULTS)
        if data:
            _merge(self.data, data, "", "config")
        self.validate()

    def __getitem__(self, key):
        return self.data[key]

    def set(self, dotted: str, value, source: str = "--set") -> None:
        node = self.data
        parts = dotted.split(".")
        for i, part in enumerate(parts[:-1]):
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"unknown key {'.'.join(parts[:i + 1])!r} in {source}")
            node = node[part]
        leaf = parts[-1]
        if leaf not in node or isinstance(node[leaf], dict):
            raise ConfigError(f"unknown key {dotted!r} in {source}")
        node[leaf] = _check_type(dotted, value, node[leaf])

    def validate(self) -> None:
        try:
            self.task_spec()
            self.siren_config("input")
            self.siren_config("output")
            self.meta_config("input")
            self.operator_config()
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"out of range: {exc}") from None
        if self.data["ablation"]["ridge_lambda"] < 0:
            raise ConfigError("ablation.ridge_lambda: must be >= 0")

    # -- builders -----------------------------------------------------------

    @property
    def seed(self) -> int:
        return self.data["seed"]

    def task_spec(self) -> TaskSpec:
        t = self.data["task"]
        return TaskSpec(kind=t["kind"], resolution=t["resolution"], n_samples=t["n_samples"], noise=t["noise"],
                        shape_count=(t["shape_min"], t["shape_max"]), seed=self.seed, splits=tuple(t["splits"]))

    def siren_config(self, side: str) -> SirenConfig:
        s = self.data[f"{side}_inr"]
        return SirenConfig(in_dim=s["In"], out_dim=s["Out"], n_hidden_layers=s["#HL"], hidden_size=s["HS"],
                           omega0=s["omega0"], final_activation=s["LAct"].lower(), latent_dim=s["Lat"],
                           hyper_hidden_layers=s["#HHL"], hyper_hidden_size=s["HHS"])

    def meta_config(self, side: str) -> MetaConfig:
        m, s = self.data["meta"], self.data[f"{side}_inr"]
        return MetaConfig(inner_steps=m["inner_steps"], test_inner_steps=m["test_inner_steps"],
                          inner_lr=s["LRL"], outer_lr=s["LR"], weight_decay=s["WD"],
                          batch_size=m["batch_size"], points_per_iter=m["points_per_iter"],
                          max_epochs=m["max_epochs"], patience=m["patience"], seed=self.seed)

    def operator_config(self) -> OperatorConfig:
        o = self.data["operator"]
        return OperatorConfig(in_dim=o["In"], out_dim=o["Out"], n_hidden_layers=o["#HL"], hidden_dim=o["HD"],
                              activation=o["Act"].lower(), residual=o["Res"], dropout=o["Dropout"], lr=o["LR"],
                              weight_decay=o["WD"], batch_size=o["batch_size"], max_epochs=o["max_epochs"],
                              patience=o["patience"], seed=self.seed)

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)


def config_load(path=None, overrides=()) -> RunConfig:
    """Read ``path`` (if given), fill defaults, then apply ``key=value`` overrides."""
    data = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file {path} does not exist")
        try:
            data = json.loads(path.read_text() or "{}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
    cfg = RunConfig.__new__(RunConfig)
    cfg.data = copy.deepcopy(DEFAULTS)
    _merge(cfg.data, data, "", str(path) if path else "config")
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        cfg.set(key, value)
    cfg.validate()
    return cfg
