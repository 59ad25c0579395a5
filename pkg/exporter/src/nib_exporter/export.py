"""Export jobs: toy-model generation, checkpoint conversion, and golden
fixture production via the torch reference."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bundle import dump_file
from .reference import ReferenceDualEncoder
from .schema import EncoderConfig, check_schema, model_manifest, weight_names, write_json


class ExportError(ValueError):
    pass


class UnsupportedArchitectureError(ExportError):
    pass


LAM_GRID = tuple(k / 10 for k in range(11))


@dataclass(frozen=True)
class ExportJob:
    config: EncoderConfig
    seed: int = 0
    out_dir: str = "fixtures"
    sample_count: int = 4
    fixture_layer: int | None = None  # default: the manifest's bottleneck layer
    nib_steps: tuple[int, ...] = (10, 1000)

    @property
    def layer(self) -> int:
        return self.fixture_layer or max(1, round(0.75 * self.config.layers))


def toy_weights(cfg: EncoderConfig, seed: int) -> dict[str, np.ndarray]:
    """Seeded scaled-normal weights. Patch bias and image positions are zero
    (patch tokens proportional to pixels); all other biases stay random so the
    zero hidden state maps to a nondegenerate embedding."""
    rng = np.random.default_rng(seed)
    s = 1.0 / math.sqrt(cfg.d_model)
    arrays = {name: rng.normal(0.0, 1.0, shape) * s for name, shape in weight_names(cfg).items()}
    arrays["img.patch_proj.b"] = np.zeros(cfg.d_model)
    arrays["img.pos"] = np.zeros((cfg.image_tokens, cfg.d_model))
    return arrays


def export_model(job: ExportJob, arrays: dict[str, np.ndarray] | None = None) -> Path:
    """Write model bundle + manifest; returns the manifest path.

    With no explicit weights, generates the seeded toy model."""
    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if arrays is None:
        arrays = toy_weights(job.config, job.seed)
        provenance = f"nib-exporter toy seed {job.seed}"
    else:
        provenance = "nib-exporter checkpoint conversion"
    check_schema(job.config, arrays)
    dump_file(out / "model.nibt", arrays)
    write_json(out / "model.json", model_manifest(job.config, "model.nibt", provenance))
    return out / "model.json"


# mapping from CLIP-style (huggingface) checkpoint names to the schema; the
# converter requires both towers to share one hidden width and depth
def convert_clip_state_dict(state: dict, cfg: EncoderConfig) -> dict[str, np.ndarray]:
    def grab(name):
        if name not in state:
            raise ExportError(f"checkpoint missing tensor {name!r}")
        t = state[name]
        return np.asarray(t.detach().cpu().numpy() if hasattr(t, "detach") else t, dtype=np.float64)

    vis_width = grab("vision_model.embeddings.class_embedding").reshape(-1).shape[0]
    txt_width = grab("text_model.embeddings.token_embedding.weight").shape[1]
    if vis_width != txt_width:
        raise UnsupportedArchitectureError(
            f"tower widths differ ({vis_width} vs {txt_width}); dual-encoder-v1 shares one width"
        )
    if vis_width != cfg.d_model:
        raise UnsupportedArchitectureError(f"width {vis_width} != config d_model {cfg.d_model}")
    for tower in ("vision_model", "text_model"):
        depth = sum(1 for k in state if k.startswith(f"{tower}.encoder.layers.") and k.endswith("layer_norm1.weight"))
        if depth != cfg.layers:
            raise UnsupportedArchitectureError(
                f"{tower} has {depth} layers, config promises {cfg.layers}"
            )

    out: dict[str, np.ndarray] = {}
    conv = grab("vision_model.embeddings.patch_embedding.weight")  # [d, C, p, p]
    out["img.patch_proj.w"] = conv.reshape(conv.shape[0], -1).T
    out["img.patch_proj.b"] = np.zeros(cfg.d_model)
    out["img.cls"] = grab("vision_model.embeddings.class_embedding").reshape(1, -1)
    out["img.pos"] = grab("vision_model.embeddings.position_embedding.weight")
    out["txt.tok"] = grab("text_model.embeddings.token_embedding.weight")
    out["txt.pos"] = grab("text_model.embeddings.position_embedding.weight")

    pairs = (
        ("img", "vision_model", "post_layernorm", "visual_projection"),
        ("txt", "text_model", "final_layer_norm", "text_projection"),
    )
    for tower, src, final_ln, proj in pairs:
        for i in range(cfg.layers):
            base = f"{src}.encoder.layers.{i}"
            out[f"{tower}.block{i}.ln1.g"] = grab(f"{base}.layer_norm1.weight")
            out[f"{tower}.block{i}.ln1.b"] = grab(f"{base}.layer_norm1.bias")
            for ours, theirs in (("wq", "q_proj"), ("wk", "k_proj"), ("wv", "v_proj"), ("wo", "out_proj")):
                out[f"{tower}.block{i}.attn.{ours}"] = grab(f"{base}.self_attn.{theirs}.weight").T
            for ours, theirs in (("bq", "q_proj"), ("bk", "k_proj"), ("bv", "v_proj"), ("bo", "out_proj")):
                out[f"{tower}.block{i}.attn.{ours}"] = grab(f"{base}.self_attn.{theirs}.bias")
            out[f"{tower}.block{i}.ln2.g"] = grab(f"{base}.layer_norm2.weight")
            out[f"{tower}.block{i}.ln2.b"] = grab(f"{base}.layer_norm2.bias")
            out[f"{tower}.block{i}.mlp.w1"] = grab(f"{base}.mlp.fc1.weight").T
            out[f"{tower}.block{i}.mlp.b1"] = grab(f"{base}.mlp.fc1.bias")
            out[f"{tower}.block{i}.mlp.w2"] = grab(f"{base}.mlp.fc2.weight").T
            out[f"{tower}.block{i}.mlp.b2"] = grab(f"{base}.mlp.fc2.bias")
        out[f"{tower}.ln_f.g"] = grab(f"{src}.{final_ln}.weight")
        out[f"{tower}.ln_f.b"] = grab(f"{src}.{final_ln}.bias")
        out[f"{tower}.proj"] = grab(f"{proj}.weight").T
    return out


def make_samples(cfg: EncoderConfig, seed: int, count: int):
    rng = np.random.default_rng(seed)
    samples = []
    min_len = min(3, cfg.max_len)
    for i in range(count):
        image = rng.uniform(0.0, 1.0, (cfg.channels, cfg.image_size, cfg.image_size))
        n = int(rng.integers(min_len, cfg.max_len + 1))
        tokens = [int(t) for t in rng.integers(0, cfg.vocab, size=n)]
        samples.append((f"g{i:02d}", image, tokens))
    return samples


def export_fixtures(job: ExportJob) -> Path:
    """Generate model + dataset + golden outputs under one directory.

    Golden entries (all float32): per sample an intermediate hidden state,
    the bottleneck score grid, path attributions at each configured step
    count, and the sm / fastig / gradcam baseline maps."""
    if job.sample_count < 1:
        raise ExportError("fixture export needs at least one sample")
    out = Path(job.out_dir)
    export_model(job)

    # reload through the bundle so both engines see identical f32 weights
    from .bundle import load_file

    entries = {k: v.astype(np.float64) for k, v in load_file(out / "model.nibt").items()}
    ref = ReferenceDualEncoder(job.config, entries)

    samples = make_samples(job.config, job.seed + 1, job.sample_count)
    # quantize images to f32 up front: both engines must consume identical bits
    data_entries = {f"{sid}.image": image.astype(np.float32) for sid, image, _ in samples}
    dump_file(out / "data.nibt", data_entries)
    write_json(out / "data.json", {
        "bundle": "data.nibt",
        "samples": [
            {"id": sid, "image": f"{sid}.image", "tokens": tokens}
            for sid, _, tokens in samples
        ],
    })

    golden: dict[str, np.ndarray] = {}
    layer = job.layer
    for sid, image, tokens in samples:
        image = data_entries[f"{sid}.image"].astype(np.float64)  # f32-quantized view
        hidden = ref.image_prefix(ref._img(image), layer).detach().numpy()
        golden[f"{sid}/hidden.l{layer}"] = hidden
        golden[f"{sid}/score.grid"] = ref.narrowed_scores(image, tokens, layer, LAM_GRID)
        for m in job.nib_steps:
            scores, gap = ref.path_attribution(image, tokens, layer, m)
            golden[f"{sid}/nib.m{m}"] = scores
            if m >= 1000 and gap > 1e-3:
                raise ExportError(f"{sid}: completeness gap {gap:.2e} at m={m} exceeds 1e-3")
        golden[f"{sid}/sm"] = ref.saliency(image, tokens)
        golden[f"{sid}/fastig"] = ref.gradient_times_input(image, tokens)
        golden[f"{sid}/gradcam"] = ref.gradcam(image, tokens, layer)
    dump_file(out / "golden.nibt", golden)
    return out / "golden.nibt"
