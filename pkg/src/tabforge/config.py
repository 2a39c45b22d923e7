"""Run configuration: defaults, JSON config files, dotted-path overrides.

Precedence is default < file < flag.  Flags arrive as `--section.key=value`
tokens; values parse as JSON when possible (numbers, booleans, lists) and
fall back to bare strings.
"""

from __future__ import annotations

import copy
import hashlib
import json

from tabforge.cleaning import CleaningConfig
from tabforge.great.model import GreatConfig
from tabforge.models.ctgan import CtganConfig
from tabforge.models.vae import VaeConfig
from tabforge.split import SplitSpec
from tabforge.training import TrainConfig


class ConfigError(Exception):
    pass


NET_SIZES = {"small": (128, 128), "normal": (256, 256)}

DEFAULTS: dict = {
    "seed": 0,
    "method": "stvae",
    "workers": 1,
    "split": {"ratios": [0.8, 0.1, 0.1], "mode": "random", "k": 10, "embedding_dim": 64},
    "cleaning": {
        "category_uniqueness_max": 0.90,
        "min_avg_category_freq": 0.03,
        "max_null_fraction": 0.50,
        "max_rejected_column_fraction": 0.90,
        "min_columns": 2,
        "min_rows": 10,
    },
    "transform": {"gmm_modes": 10},
    "model": {
        "net_size": "small",
        "z_dim": 128,
        "pac": 10,
        "batch": 500,
        "lambda_gp": 10.0,
        "tau": 0.2,
        "latent": 64,
        "sig_dim": 16,
        "recon_weight": 2.0,
        "lr_gan": 2e-4,
        "lr_vae": 1e-3,
        "great": {
            "d_model": 128,
            "n_heads": 4,
            "n_layers": 4,
            "ctx": 256,
            "vocab_size": 2048,
            "lr": 3e-4,
            "batch": 32,
            "temperature": 0.7,
            "max_retries": 8,
        },
    },
    "training": {
        "iterations": 10,
        "epochs": 50,
        "wall_clock_budget": None,
        "patience": 30,
        "min_delta": 1e-4,
        "ckpt_every": 50,
        "val_fraction": 0.1,
    },
}


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, dotted: str, value: str) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        if k not in node or not isinstance(node[k], dict):
            raise ConfigError(f"unknown config section {dotted!r}")
        node = node[k]
    if keys[-1] not in node:
        raise ConfigError(f"unknown config key {dotted!r}")
    node[keys[-1]] = _parse_value(value)


def load_config(path=None, overrides: list[str] = ()) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = _merge(cfg, doc)
    for token in overrides:
        if not token.startswith("--") or "=" not in token:
            raise ConfigError(f"overrides look like --section.key=value, got {token!r}")
        dotted, value = token[2:].split("=", 1)
        apply_override(cfg, dotted, value)
    return cfg


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


def cleaning_config(cfg: dict) -> CleaningConfig:
    return CleaningConfig(**cfg["cleaning"])


def split_spec(cfg: dict, seed: int | None = None) -> SplitSpec:
    s = cfg["split"]
    return SplitSpec(
        ratios=tuple(s["ratios"]),
        seed=cfg["seed"] if seed is None else seed,
        mode=s["mode"],
        k=s["k"],
    )


def train_config(cfg: dict, method: str | None = None) -> TrainConfig:
    method = method or cfg["method"]
    m = cfg["model"]
    hidden = NET_SIZES.get(m["net_size"])
    if hidden is None:
        raise ConfigError(f"unknown net_size {m['net_size']!r}")
    t = cfg["training"]
    ctgan = CtganConfig(
        z_dim=m["z_dim"],
        pac=m["pac"],
        batch=m["batch"],
        lambda_gp=m["lambda_gp"],
        tau=m["tau"],
        hidden=hidden,
        lr=m["lr_gan"],
    )
    vae = VaeConfig(
        variant=method if method in ("tvae", "stvae", "stvaem") else "stvae",
        latent=m["latent"],
        hidden=hidden,
        sig_dim=m["sig_dim"],
        lr=m["lr_vae"],
        batch=m["batch"],
        recon_weight=m["recon_weight"],
    )
    great = GreatConfig(**m["great"])
    return TrainConfig(
        kind=method,
        seed=cfg["seed"],
        iterations=t["iterations"],
        epochs=t["epochs"],
        wall_clock_budget=t["wall_clock_budget"],
        patience=t["patience"],
        min_delta=t["min_delta"],
        ckpt_every=t["ckpt_every"],
        val_fraction=t["val_fraction"],
        gmm_modes=cfg["transform"]["gmm_modes"],
        great_vocab=m["great"]["vocab_size"],
        ctgan=ctgan,
        vae=vae,
        great=great,
    )
