"""Model and dataset manifests around the tensor-bundle container.

A model on disk is a JSON manifest (family tag, architecture fields, the
bundle file, schema version, default bottleneck layer) plus one bundle
holding every weight named by the schema. Datasets are a manifest listing
{id, image entry, token ids} against a second bundle of image tensors.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .bundle import read_bundle_file, write_bundle_file
from .encoder import DualEncoderModel, ModelConfig, model_from_weights, weight_schema
from .errors import ConfigError, ManifestError, MissingWeightError
from .evaluation import Sample

MODEL_FAMILY = "dual-encoder-v1"
WEIGHT_SCHEMA_VERSION = 1

_CONFIG_FIELDS = (
    "image_size",
    "channels",
    "patch",
    "d_model",
    "heads",
    "layers",
    "proj_dim",
    "vocab",
    "max_len",
    "ln_eps",
)


def default_bottleneck_layer(layers: int) -> int:
    """Three-quarters depth, the default split point for attribution."""
    return max(1, round(0.75 * layers))


def save_model(model: DualEncoderModel, out_dir, name: str = "model") -> Path:
    """Write `<name>.nibt` + `<name>.json`; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bundle_name = f"{name}.nibt"
    write_bundle_file(out_dir / bundle_name, {k: v.data for k, v in model.weights.items()})
    manifest = {
        "family": MODEL_FAMILY,
        "config": {f: getattr(model.config, f) for f in _CONFIG_FIELDS},
        "bundle": bundle_name,
        "weight_schema": WEIGHT_SCHEMA_VERSION,
        "bottleneck_layer": default_bottleneck_layer(model.config.layers),
    }
    manifest_path = out_dir / f"{name}.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path


def _load_manifest(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")
    return doc


def load_model(manifest_path) -> DualEncoderModel:
    """Load and shape-check a model; float32 payloads widen to float64."""
    manifest_path = Path(manifest_path)
    doc = _load_manifest(manifest_path)
    if doc.get("family") != MODEL_FAMILY:
        raise ManifestError(f"unsupported model family {doc.get('family')!r}")
    if doc.get("weight_schema") != WEIGHT_SCHEMA_VERSION:
        raise ManifestError(f"unsupported weight schema {doc.get('weight_schema')!r}")
    cfg_doc = doc.get("config")
    if not isinstance(cfg_doc, dict):
        raise ManifestError("manifest missing config object")
    try:
        config = ModelConfig(**{f: cfg_doc[f] for f in _CONFIG_FIELDS})
    except KeyError as e:
        raise ManifestError(f"config missing field {e.args[0]!r}") from e
    except TypeError as e:
        raise ConfigError(str(e)) from e

    entries = read_bundle_file(manifest_path.parent / doc["bundle"])
    arrays: dict[str, np.ndarray] = {}
    for wname, shape in weight_schema(config).items():
        if wname not in entries:
            raise MissingWeightError(f"bundle missing weight {wname!r}")
        arr = entries[wname]
        if arr.shape != shape:
            raise ManifestError(
                f"weight {wname!r} has shape {arr.shape}, manifest promises {shape}"
            )
        arrays[wname] = arr.astype(np.float64)
    return model_from_weights(config, arrays)


def bottleneck_layer_from_manifest(manifest_path) -> int:
    doc = _load_manifest(manifest_path)
    layer = doc.get("bottleneck_layer")
    if not isinstance(layer, int) or layer < 1:
        raise ManifestError(f"manifest bottleneck_layer {layer!r} invalid")
    return layer


def save_dataset(samples, out_dir, name: str = "data") -> Path:
    """Write `<name>.nibt` of image tensors + `<name>.json` sample list."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = {f"{s.id}.image": s.image for s in samples}
    bundle_name = f"{name}.nibt"
    write_bundle_file(out_dir / bundle_name, entries)
    manifest = {
        "bundle": bundle_name,
        "samples": [
            {"id": s.id, "image": f"{s.id}.image", "tokens": list(s.tokens)}
            for s in samples
        ],
    }
    manifest_path = out_dir / f"{name}.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path


def load_dataset(manifest_path) -> list[Sample]:
    manifest_path = Path(manifest_path)
    doc = _load_manifest(manifest_path)
    if "bundle" not in doc or "samples" not in doc:
        raise ManifestError("dataset manifest needs 'bundle' and 'samples'")
    entries = read_bundle_file(manifest_path.parent / doc["bundle"])
    samples = []
    for rec in doc["samples"]:
        entry = rec.get("image")
        if entry not in entries:
            raise ManifestError(f"dataset bundle missing image entry {entry!r}")
        samples.append(
            Sample(
                id=rec["id"],
                image=entries[entry].astype(np.float64),
                tokens=tuple(rec["tokens"]),
            )
        )
    return samples
