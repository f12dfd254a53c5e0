"""JSON run configuration with ``model``, ``train``, ``augment`` and ``preprocess`` sections.

Unknown sections or keys are rejected, and every value is type-checked against
the field's default before anything runs.
"""

import json
from dataclasses import MISSING, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .augment import AugmentConfig
from .core import ValidationError
from .preprocess import PreprocessConfig

# fields of ModelConfig that may be set from a file; the rest come from the data
MODEL_KEYS = {
    "feature_width": 64,
    "inception_kernels": [3, 5, 7, 9],
    "n_resnet_blocks": 9,
    "resnet_stage_strides": [1, 1, 1, 2, 1, 1, 2, 1, 1],
    "classifier_hidden": 128,
    "dropout": 0.0,
    "arch": "scfnet",
}
TRAIN_KEYS = {
    "loss": "kl_soft",
    "max_epochs": 20,
    "early_stop_patience": 2,
    "batch_size": 32,
    "learning_rate": 1e-3,
    "betas": [0.9, 0.999],
    "eps": 1e-8,
    "k_folds": 5,
    "seed": 0,
    "freeze_extractor": False,
    "use_augment": True,
    "jobs": 1,
}
SECTIONS = ("model", "train", "augment", "preprocess")


@dataclass
class RunConfig:
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    augment: Optional[AugmentConfig] = None
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)


def _dataclass_defaults(cls):
    out = {}
    for f in fields(cls):
        if f.default is not MISSING:
            out[f.name] = f.default
        elif f.default_factory is not MISSING:
            out[f.name] = f.default_factory()
    return out


def _check_value(section, key, value, default):
    where = f"{section}.{key}"
    if default is None:
        if value is not None and not (isinstance(value, list) and all(_is_int(v) for v in value)):
            raise ValidationError(f"{where} must be null or a list of integers")
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = _is_int(value)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, (list, tuple)):
        ok = isinstance(value, list)
        if ok and isinstance(default, tuple):
            ok = len(value) == len(default)
        if ok and default:
            ok = all(_check_scalar(v, default[0]) for v in value)
        if ok and isinstance(default, tuple):
            value = tuple(value)
    else:
        ok = True
    if not ok:
        raise ValidationError(f"{where} has the wrong type: {value!r}")
    return value


def _check_scalar(value, default):
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return _is_int(value)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    return isinstance(value, type(default))


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _section(raw, name, defaults):
    body = raw.get(name, {})
    if not isinstance(body, dict):
        raise ValidationError(f"config section {name!r} must be an object")
    unknown = sorted(set(body) - set(defaults))
    if unknown:
        raise ValidationError(f"unknown key(s) in config section {name!r}: {', '.join(unknown)}")
    return {k: _check_value(name, k, v, defaults[k]) for k, v in body.items()}


def parse_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ValidationError("config must be a JSON object")
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ValidationError(f"unknown config section(s): {', '.join(unknown)}")
    model = _section(raw, "model", MODEL_KEYS)
    train = _section(raw, "train", TRAIN_KEYS)
    if "betas" in train:
        train["betas"] = tuple(train["betas"])
    augment = None
    if "augment" in raw:
        augment = AugmentConfig(**_section(raw, "augment", _dataclass_defaults(AugmentConfig)))
    preprocess = PreprocessConfig(**_section(raw, "preprocess", _dataclass_defaults(PreprocessConfig)))
    return RunConfig(model=model, train=train, augment=augment, preprocess=preprocess)


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc.msg} at line {exc.lineno}") from None
    return parse_config(raw)
