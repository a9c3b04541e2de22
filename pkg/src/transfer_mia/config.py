"""Experiment configuration: JSON documents validated against ``config_schema.json``.

Defaults are merged in before validation, and the merged document (minus
runtime-only options ``output_dir`` and ``workers``) is what gets
fingerprinted. Corpus locators are either filesystem paths, resolved
relative to the config file, or ``toy:<name>`` for a bundled corpus.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema

from .attack import DEFAULT_ATTACK_CONFIG
from .models import ModelSpec, TrainConfig, TransferMode
from .shadow import DEFAULT_FEATURE_K, ShadowPlan
from .toy import bundled_path

RUNTIME_KEYS = ("output_dir", "workers")

DEFAULTS = {
    "workers": 1,
    "corpora": {"students": [], "resolution": 32, "limit": None, "sweep_corpus": None},
    "models": {
        "target": {"family": "residual", "num_blocks": 5, "width": 8},
        "shadow": {"family": "residual", "num_blocks": 5, "width": 8},
    },
    "train": {
        "epochs": 50, "learning_rate": 0.001, "batch_size": 32,
        "optimizer": "sgd", "momentum": 0.9, "weight_decay": 0.0,
    },
    "transfer": {"kind": "fine_tune", "frozen_blocks": 0},
    "attack": {
        "epochs": DEFAULT_ATTACK_CONFIG.epochs,
        "learning_rate": DEFAULT_ATTACK_CONFIG.learning_rate,
        "batch_size": DEFAULT_ATTACK_CONFIG.batch_size,
        "optimizer": DEFAULT_ATTACK_CONFIG.optimizer,
        "momentum": DEFAULT_ATTACK_CONFIG.momentum,
        "weight_decay": DEFAULT_ATTACK_CONFIG.weight_decay,
        "feature_k": DEFAULT_FEATURE_K,
        "hidden_width": 64,
        "threshold": 0.5,
    },
    "shadow": {"num_shadow_models": 1},
}


class ConfigError(ValueError):
    """Schema or semantic violation; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def schema() -> dict:
    return json.loads(resources.files("transfer_mia").joinpath("config_schema.json").read_text())


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _validate(doc: dict) -> None:
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.path), list(map(str, e.path))))
    if not errors:
        return
    err = errors[0]
    path = ".".join(str(p) for p in err.path)
    if err.validator == "required":
        missing = err.message.split("'")[1]
        path = f"{path}.{missing}" if path else missing
    raise ConfigError(path or "<root>", err.message)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    resolved: dict
    base_dir: Path
    output_dir: Path
    workers: int

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | str = ".", output_dir=None, workers=None, seed_override=None):
        if not isinstance(doc, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        if seed_override is not None:
            s = int(seed_override)
            doc = {**doc, "seeds": {"data": s, "teacher": s, "shadow": s + 1, "attack": s}}
        _validate(doc)  # required keys are checked before defaults can mask them
        merged = _merge(DEFAULTS, doc)
        _validate(merged)
        exp = merged["experiment"]
        if exp in ("attack2", "attack3", "q1", "q2", "q3") and not merged["corpora"]["students"]:
            raise ConfigError("corpora.students", f"experiment {exp} needs at least one student corpus")
        if exp == "q3" and merged["models"]["shadow"]["family"] == merged["models"]["target"]["family"]:
            raise ConfigError("models.shadow.family", "q3 needs shadow and target families to differ")
        if exp == "q2" and merged["transfer"]["kind"] != "fine_tune":
            raise ConfigError("transfer.kind", "q2 sweeps K itself; leave transfer at fine_tune")
        base_dir = Path(base_dir)
        out = output_dir or merged.get("output_dir") or f"runs/{exp}"
        out = Path(out) if Path(out).is_absolute() or output_dir else base_dir / out
        resolved = {k: v for k, v in merged.items() if k not in RUNTIME_KEYS}
        return cls(exp, resolved, base_dir, out, int(workers or merged["workers"]))

    @classmethod
    def load(cls, path: str | Path, **overrides) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("<root>", f"unreadable config {path}: {exc}") from None
        return cls.from_dict(doc, base_dir=path.parent, **overrides)

    # --- typed views -----------------------------------------------------

    def locate(self, locator: str) -> Path:
        if locator.startswith("toy:"):
            return bundled_path(locator[4:])
        p = Path(locator)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def seeds(self) -> dict[str, int]:
        return self.resolved["seeds"]

    @property
    def corpora(self) -> dict:
        return self.resolved["corpora"]

    def model_spec(self, role: str, num_classes: int, input_shape) -> ModelSpec:
        m = self.resolved["models"][role]
        return ModelSpec(m["family"], num_classes, tuple(input_shape), m["num_blocks"], m["width"])

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.resolved["train"], seed=self.seeds["teacher"])

    def attack_config(self) -> TrainConfig:
        a = self.resolved["attack"]
        fields = ("epochs", "learning_rate", "batch_size", "optimizer", "momentum", "weight_decay")
        return TrainConfig(**{f: a[f] for f in fields}, seed=self.seeds["attack"])

    def transfer_mode(self) -> TransferMode:
        t = self.resolved["transfer"]
        return TransferMode(t["kind"], t["frozen_blocks"] if t["kind"] == "feature_extractor" else 0)

    def shadow_plan(self, num_classes: int, input_shape) -> ShadowPlan:
        attack = self.resolved["attack"]
        return ShadowPlan(
            shadow_spec=self.model_spec("shadow", num_classes, input_shape),
            train_cfg=self.train_config(),
            transfer_mode=self.transfer_mode(),
            num_shadow_models=self.resolved["shadow"]["num_shadow_models"],
            feature_k=attack["feature_k"],
            shadow_seed=self.seeds["shadow"],
            target_spec=self.model_spec("target", num_classes, input_shape),
        )
