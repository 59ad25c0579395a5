"""The dual-encoder-v1 weight-name schema and manifest layouts.

Independent implementation of the interchange contract: every weight the
family promises, with its shape, in a canonical order, plus JSON manifest
construction for models and datasets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

FAMILY = "dual-encoder-v1"
WEIGHT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 32
    channels: int = 3
    patch: int = 8
    d_model: int = 32
    heads: int = 4
    layers: int = 4
    proj_dim: int = 16
    vocab: int = 64
    max_len: int = 8
    ln_eps: float = 2.0

    def __post_init__(self):
        if self.image_size % self.patch:
            raise ValueError("image_size must be divisible by patch")
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        if self.layers < 2:
            raise ValueError("layers must be >= 2")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch

    @property
    def image_tokens(self) -> int:
        return 1 + self.grid * self.grid

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch * self.patch


def weight_names(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    d, dff = cfg.d_model, 4 * cfg.d_model
    out: dict[str, tuple[int, ...]] = {}

    def blocks(tower: str):
        for i in range(cfg.layers):
            b = f"{tower}.block{i}"
            out[f"{b}.ln1.g"] = (d,)
            out[f"{b}.ln1.b"] = (d,)
            for w in ("wq", "wk", "wv", "wo"):
                out[f"{b}.attn.{w}"] = (d, d)
            for w in ("bq", "bk", "bv", "bo"):
                out[f"{b}.attn.{w}"] = (d,)
            out[f"{b}.ln2.g"] = (d,)
            out[f"{b}.ln2.b"] = (d,)
            out[f"{b}.mlp.w1"] = (d, dff)
            out[f"{b}.mlp.b1"] = (dff,)
            out[f"{b}.mlp.w2"] = (dff, d)
            out[f"{b}.mlp.b2"] = (d,)

    out["img.patch_proj.w"] = (cfg.patch_dim, d)
    out["img.patch_proj.b"] = (d,)
    out["img.cls"] = (1, d)
    out["img.pos"] = (cfg.image_tokens, d)
    blocks("img")
    out["img.ln_f.g"] = (d,)
    out["img.ln_f.b"] = (d,)
    out["img.proj"] = (d, cfg.proj_dim)
    out["txt.tok"] = (cfg.vocab, d)
    out["txt.pos"] = (cfg.max_len, d)
    blocks("txt")
    out["txt.ln_f.g"] = (d,)
    out["txt.ln_f.b"] = (d,)
    out["txt.proj"] = (d, cfg.proj_dim)
    return out


def check_schema(cfg: EncoderConfig, entries: dict) -> None:
    """Raise if any promised weight is missing or misshapen."""
    for name, shape in weight_names(cfg).items():
        if name not in entries:
            raise KeyError(f"missing weight {name!r}")
        if tuple(entries[name].shape) != shape:
            raise ValueError(f"weight {name!r}: shape {tuple(entries[name].shape)} != {shape}")


def model_manifest(cfg: EncoderConfig, bundle_name: str, provenance: str) -> dict:
    return {
        "family": FAMILY,
        "config": {
            "image_size": cfg.image_size,
            "channels": cfg.channels,
            "patch": cfg.patch,
            "d_model": cfg.d_model,
            "heads": cfg.heads,
            "layers": cfg.layers,
            "proj_dim": cfg.proj_dim,
            "vocab": cfg.vocab,
            "max_len": cfg.max_len,
            "ln_eps": cfg.ln_eps,
        },
        "bundle": bundle_name,
        "weight_schema": WEIGHT_SCHEMA_VERSION,
        "bottleneck_layer": max(1, round(0.75 * cfg.layers)),
        "provenance": provenance,
    }


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
