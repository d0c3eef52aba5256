"""Flat key-value config files for model, training, and loss settings.

Format: one `key = value` per line, `#` starts a comment, blank lines
are ignored. Unknown keys are a hard error so typos cannot silently
fall back to defaults.
"""

from __future__ import annotations

from pathlib import Path

from .errors import UsageError
from .loss import LossConfig
from .model import ModelConfig
from .trainer import TrainConfig

MODEL_KEYS = {
    "hidden_dim": int, "n_layers": int, "n_heads": int, "ffn_dim": int,
    "max_len": int, "adapter_depth": int, "bottleneck_dim": int, "agg_dim": int,
    "adapter_positions": "int_list",
}
TRAIN_KEYS = {
    "epochs": int, "batch_size": int, "learning_rate": float,
    "adam_beta1": float, "adam_beta2": float, "adam_eps": float,
}
LOSS_KEYS = {"temperature": float, "tau_plus": float, "beta": float}

KNOWN_KEYS = {**MODEL_KEYS, **TRAIN_KEYS, **LOSS_KEYS}


def parse_config_file(path: str | Path) -> dict:
    """Parse and type-check a config file; unknown keys raise UsageError."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    values: dict = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}: line {lineno}: expected 'key = value'")
        key, _, raw_value = (part.strip() for part in line.partition("="))
        if key not in KNOWN_KEYS:
            raise UsageError(f"{path}: line {lineno}: unknown key {key!r}")
        if key in values:
            raise UsageError(f"{path}: line {lineno}: duplicate key {key!r}")
        caster = KNOWN_KEYS[key]
        try:
            if caster == "int_list":
                values[key] = tuple(int(p) for p in raw_value.split(","))
            else:
                values[key] = caster(raw_value)
        except ValueError as exc:
            raise UsageError(f"{path}: line {lineno}: bad value for {key!r}: "
                             f"{raw_value!r}") from exc
    return values


def resolve_model_config(values: dict, vocab_size: int) -> ModelConfig:
    base = ModelConfig.desk(vocab_size).to_dict()
    for key in MODEL_KEYS:
        if key in values:
            base[key] = list(values[key]) if key == "adapter_positions" else values[key]
    base["vocab_size"] = vocab_size
    return ModelConfig.from_dict(base)


def resolve_train_config(values: dict, rng_seed: int) -> TrainConfig:
    loss = LossConfig(
        temperature=values.get("temperature", 0.5),
        tau_plus=values.get("tau_plus", 0.05),
        beta=values.get("beta", 1.0),
    )
    return TrainConfig(
        epochs=values.get("epochs", 3),
        batch_size=values.get("batch_size", 32),
        learning_rate=values.get("learning_rate", 4e-3),
        adam_beta1=values.get("adam_beta1", 0.9),
        adam_beta2=values.get("adam_beta2", 0.999),
        adam_eps=values.get("adam_eps", 1e-8),
        rng_seed=rng_seed,
        loss=loss,
    )
