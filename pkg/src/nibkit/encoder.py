"""Toy CLIP-style dual encoder with an explicit prefix/suffix split.

Both towers are pre-LN transformers over a shared hidden width. The image
tower consumes patch tokens behind a CLS token; the text tower consumes
token ids and pools the final position. Any layer l in [1, L] can act as
the split point: `suffix(prefix(x, l))` is bitwise identical to the full
forward because the full forward *is* that composition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, LayerRangeError, ModalityError, TokenError
from .tensor import Tensor

IMAGE = "image"
TEXT = "text"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; every weight shape derives from these."""

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
        checks = [
            (self.image_size > 0, "image_size must be positive"),
            (self.channels > 0, "channels must be positive"),
            (self.patch > 0, "patch must be positive"),
            (self.image_size % self.patch == 0, "image_size must be divisible by patch"),
            (self.d_model > 0, "d_model must be positive"),
            (self.heads > 0, "heads must be positive"),
            (self.d_model % self.heads == 0, "d_model must be divisible by heads"),
            (self.layers >= 2, "layers must be >= 2"),
            (self.proj_dim > 0, "proj_dim must be positive"),
            (self.vocab > 0, "vocab must be positive"),
            (self.max_len > 0, "max_len must be positive"),
            (self.ln_eps > 0, "ln_eps must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def grid(self) -> int:
        return self.image_size // self.patch

    @property
    def image_tokens(self) -> int:
        return 1 + self.grid * self.grid

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch * self.patch


def weight_schema(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every weight name and shape, in the canonical generation order."""
    d, dff = config.d_model, 4 * config.d_model
    schema: dict[str, tuple[int, ...]] = {}

    def block_entries(prefix: str):
        for i in range(config.layers):
            b = f"{prefix}.block{i}"
            schema[f"{b}.ln1.g"] = (d,)
            schema[f"{b}.ln1.b"] = (d,)
            for name in ("wq", "wk", "wv", "wo"):
                schema[f"{b}.attn.{name}"] = (d, d)
            for name in ("bq", "bk", "bv", "bo"):
                schema[f"{b}.attn.{name}"] = (d,)
            schema[f"{b}.ln2.g"] = (d,)
            schema[f"{b}.ln2.b"] = (d,)
            schema[f"{b}.mlp.w1"] = (d, dff)
            schema[f"{b}.mlp.b1"] = (dff,)
            schema[f"{b}.mlp.w2"] = (dff, d)
            schema[f"{b}.mlp.b2"] = (d,)

    schema["img.patch_proj.w"] = (config.patch_dim, d)
    schema["img.patch_proj.b"] = (d,)
    schema["img.cls"] = (1, d)
    schema["img.pos"] = (config.image_tokens, d)
    block_entries("img")
    schema["img.ln_f.g"] = (d,)
    schema["img.ln_f.b"] = (d,)
    schema["img.proj"] = (d, config.proj_dim)
    schema["txt.tok"] = (config.vocab, d)
    schema["txt.pos"] = (config.max_len, d)
    block_entries("txt")
    schema["txt.ln_f.g"] = (d,)
    schema["txt.ln_f.b"] = (d,)
    schema["txt.proj"] = (d, config.proj_dim)
    return schema


class PassCounter:
    """Counts encoder-section invocations (forward) and per-tower tape walks
    (backward). A forward pass is one prefix, suffix, or full-tower run,
    regardless of how many noise draws it batches internally."""

    def __init__(self):
        self.forward = 0
        self.backward = 0

    def add_forward(self, n: int = 1) -> None:
        self.forward += n

    def add_backward(self, n: int = 1) -> None:
        self.backward += n

    def reset(self) -> None:
        self.forward = 0
        self.backward = 0

    def snapshot(self) -> tuple[int, int]:
        return (self.forward, self.backward)


@dataclass
class DualEncoderModel:
    config: ModelConfig
    weights: dict[str, Tensor]
    counter: PassCounter = field(default_factory=PassCounter)
    zero_embed_cache: dict = field(default_factory=dict)

    def weight(self, name: str) -> Tensor:
        return self.weights[name]


@dataclass(frozen=True)
class HiddenState:
    """Intermediate activation of one tower after block `layer` (1-based)."""

    state: Tensor
    layer: int
    modality: str
    roles: tuple[str, ...]

    @property
    def tokens(self) -> int:
        return self.state.shape[0]

    def content_indices(self) -> list[int]:
        """Token positions reported in attribution maps (CLS/special excluded)."""
        return [i for i, r in enumerate(self.roles) if r in ("patch", "text")]


def init_toy(seed: int, config: ModelConfig) -> DualEncoderModel:
    """Deterministic random model; the same seed yields bitwise-identical weights.

    Parameters are drawn N(0, 1)/sqrt(d_model) from one seeded generator in
    schema order, with departures that make an untrained model behave like a
    usable retrieval encoder at desk scale:

    - patch projection bias and image positions are zero, so patch tokens are
      exactly proportional to their pixels and pixel masking means content
      removal rather than a jump to a bias/position point;
    - token embeddings are emphasized (x2) over text positions (x0.3), keeping
      text tokens content-dominated;
    - if a fixed probe batch shows negative mean image-text similarity, the
      text projection is sign-flipped (trained dual encoders align matched
      pairs positively; a random cone may point either way).

    Random biases elsewhere keep the all-zero hidden state off the zero fixed
    point, so the closed-bottleneck embedding is nondegenerate.
    """
    rng = np.random.default_rng(seed)
    s = 1.0 / math.sqrt(config.d_model)
    arrays: dict[str, np.ndarray] = {}
    for name, shape in weight_schema(config).items():
        arrays[name] = rng.normal(0.0, 1.0, size=shape) * s
    arrays["img.patch_proj.b"] = np.zeros_like(arrays["img.patch_proj.b"])
    arrays["img.pos"] = np.zeros_like(arrays["img.pos"])
    arrays["txt.tok"] = arrays["txt.tok"] * 2.0
    arrays["txt.pos"] = arrays["txt.pos"] * 0.3

    model = model_from_weights(config, arrays)
    probe = np.random.default_rng(seed ^ 0x5EED)
    sims = []
    for _ in range(8):
        image = probe.uniform(0.0, 1.0, size=(config.channels, config.image_size, config.image_size))
        tokens = [int(t) for t in probe.integers(0, config.vocab, size=min(6, config.max_len))]
        sims.append(similarity(model, image, tokens))
    if float(np.mean(sims)) < 0.0:
        arrays["txt.proj"] = -arrays["txt.proj"]
        model = model_from_weights(config, arrays)
    model.counter.reset()
    return model


def model_from_weights(config: ModelConfig, arrays: dict[str, np.ndarray]) -> DualEncoderModel:
    """Wrap raw arrays (already schema-checked by the caller) into a model."""
    return DualEncoderModel(config=config, weights={k: Tensor(v) for k, v in arrays.items()})


def _attention(model: DualEncoderModel, tower: str, i: int, x: Tensor) -> Tensor:
    cfg = model.config
    w = model.weights
    b = f"{tower}.block{i}.attn"
    q = T.add_row(T.matmul(x, w[f"{b}.wq"]), w[f"{b}.bq"])
    k = T.add_row(T.matmul(x, w[f"{b}.wk"]), w[f"{b}.bk"])
    v = T.add_row(T.matmul(x, w[f"{b}.wv"]), w[f"{b}.bv"])
    dh = cfg.d_model // cfg.heads
    inv = 1.0 / math.sqrt(dh)
    heads = []
    for h in range(cfg.heads):
        lo, hi = h * dh, (h + 1) * dh
        qh, kh, vh = T.col_slice(q, lo, hi), T.col_slice(k, lo, hi), T.col_slice(v, lo, hi)
        logits = T.scale(T.matmul(qh, T.transpose(kh)), inv)
        attn = T.softmax(logits, axis=1)
        heads.append(T.matmul(attn, vh))
    merged = T.concat_cols(heads)
    return T.add_row(T.matmul(merged, w[f"{b}.wo"]), w[f"{b}.bo"])


def _mlp(model: DualEncoderModel, tower: str, i: int, x: Tensor) -> Tensor:
    w = model.weights
    b = f"{tower}.block{i}.mlp"
    h = T.gelu(T.add_row(T.matmul(x, w[f"{b}.w1"]), w[f"{b}.b1"]))
    return T.add_row(T.matmul(h, w[f"{b}.w2"]), w[f"{b}.b2"])


def _block(model: DualEncoderModel, tower: str, i: int, x: Tensor) -> Tensor:
    w = model.weights
    eps = model.config.ln_eps
    b = f"{tower}.block{i}"
    x = T.add(x, _attention(model, tower, i, T.layer_norm(x, w[f"{b}.ln1.g"], w[f"{b}.ln1.b"], eps)))
    x = T.add(x, _mlp(model, tower, i, T.layer_norm(x, w[f"{b}.ln2.g"], w[f"{b}.ln2.b"], eps)))
    return x


def _run_blocks(model: DualEncoderModel, tower: str, x: Tensor, start: int, stop: int) -> Tensor:
    for i in range(start, stop):
        x = _block(model, tower, i, x)
    return x


def _check_layer(model: DualEncoderModel, layer: int) -> None:
    if not 1 <= layer <= model.config.layers:
        raise LayerRangeError(
            f"layer {layer} outside [1, {model.config.layers}]", layer=layer
        )


def _image_embed(model: DualEncoderModel, x_img: Tensor) -> Tensor:
    cfg = model.config
    expected = (cfg.channels, cfg.image_size, cfg.image_size)
    if x_img.shape != expected:
        raise ModalityError(f"image shape {x_img.shape} != expected {expected}")
    patches = T.patchify(x_img, cfg.patch)
    emb = T.add_row(T.matmul(patches, model.weight("img.patch_proj.w")), model.weight("img.patch_proj.b"))
    tokens = T.concat_rows([model.weight("img.cls"), emb])
    return T.add(tokens, model.weight("img.pos"))


def _image_prefix(model: DualEncoderModel, x_img: Tensor, layer: int) -> HiddenState:
    state = _run_blocks(model, "img", _image_embed(model, x_img), 0, layer)
    roles = ("cls",) + ("patch",) * (model.config.image_tokens - 1)
    return HiddenState(state=state, layer=layer, modality=IMAGE, roles=roles)


def _image_suffix(model: DualEncoderModel, z: HiddenState) -> Tensor:
    cfg = model.config
    x = _run_blocks(model, "img", z.state, z.layer, cfg.layers)
    x = T.layer_norm(x, model.weight("img.ln_f.g"), model.weight("img.ln_f.b"), cfg.ln_eps)
    pooled = T.take_row(x, 0)
    return T.vecmat(pooled, model.weight("img.proj"))


def _coerce_image(x_img) -> Tensor:
    return x_img if isinstance(x_img, Tensor) else Tensor(x_img)


def encode_image_prefix(model: DualEncoderModel, x_img, layer: int) -> HiddenState:
    """Patchify, embed, prepend CLS, add positions, run blocks 1..layer."""
    _check_layer(model, layer)
    model.counter.add_forward()
    return _image_prefix(model, _coerce_image(x_img), layer)


def encode_image_suffix(model: DualEncoderModel, z: HiddenState) -> Tensor:
    """Run blocks layer+1..L, final LN, CLS pooling, projection."""
    if z.modality != IMAGE:
        raise ModalityError(f"image suffix applied to {z.modality} state")
    _check_layer(model, z.layer)
    model.counter.add_forward()
    return _image_suffix(model, z)


def encode_image(model: DualEncoderModel, x_img) -> Tensor:
    """Full image tower; counted as a single forward pass."""
    model.counter.add_forward()
    x = _coerce_image(x_img)
    return _image_suffix(model, _image_prefix(model, x, model.config.layers))


def _check_tokens(model: DualEncoderModel, ids: Sequence[int]) -> list[int]:
    ids = list(ids)
    if len(ids) == 0:
        raise TokenError("empty token list")
    if len(ids) > model.config.max_len:
        raise TokenError(f"{len(ids)} tokens exceed max_len {model.config.max_len}")
    for t in ids:
        if not 0 <= int(t) < model.config.vocab:
            raise TokenError(f"token id {t} outside vocab of {model.config.vocab}")
    return [int(t) for t in ids]


def text_token_embeddings(model: DualEncoderModel, ids: Sequence[int]) -> np.ndarray:
    """Embedding-table rows for a token sequence (before positions)."""
    ids = _check_tokens(model, ids)
    return model.weight("txt.tok").data[np.asarray(ids, dtype=np.int64)].copy()


def _text_embed(model: DualEncoderModel, ids: Sequence[int], embeddings: Tensor | None) -> Tensor:
    ids = _check_tokens(model, ids)
    n = len(ids)
    if embeddings is None:
        emb = T.embedding_lookup(model.weight("txt.tok"), ids)
    else:
        if embeddings.shape != (n, model.config.d_model):
            raise ModalityError(
                f"embedding override shape {embeddings.shape} != ({n}, {model.config.d_model})"
            )
        emb = embeddings
    pos = Tensor(model.weight("txt.pos").data[:n])
    return T.add(emb, pos)


def _text_prefix(model, ids, layer: int, embeddings: Tensor | None) -> HiddenState:
    state = _run_blocks(model, "txt", _text_embed(model, ids, embeddings), 0, layer)
    return HiddenState(state=state, layer=layer, modality=TEXT, roles=("text",) * state.shape[0])


def _text_suffix(model: DualEncoderModel, z: HiddenState) -> Tensor:
    cfg = model.config
    x = _run_blocks(model, "txt", z.state, z.layer, cfg.layers)
    x = T.layer_norm(x, model.weight("txt.ln_f.g"), model.weight("txt.ln_f.b"), cfg.ln_eps)
    pooled = T.take_row(x, x.shape[0] - 1)
    return T.vecmat(pooled, model.weight("txt.proj"))


def encode_text_prefix(
    model: DualEncoderModel, ids: Sequence[int], layer: int, embeddings: Tensor | None = None
) -> HiddenState:
    """Token embeddings (or a supplied override) + positions, blocks 1..layer."""
    _check_layer(model, layer)
    model.counter.add_forward()
    return _text_prefix(model, ids, layer, embeddings)


def encode_text_suffix(model: DualEncoderModel, z: HiddenState) -> Tensor:
    """Blocks layer+1..L, final LN, last-token pooling, projection."""
    if z.modality != TEXT:
        raise ModalityError(f"text suffix applied to {z.modality} state")
    _check_layer(model, z.layer)
    model.counter.add_forward()
    return _text_suffix(model, z)


def encode_text(
    model: DualEncoderModel, ids: Sequence[int], embeddings: Tensor | None = None
) -> Tensor:
    """Full text tower; counted as a single forward pass."""
    model.counter.add_forward()
    return _text_suffix(model, _text_prefix(model, ids, model.config.layers, embeddings))


def similarity(model: DualEncoderModel, x_img, x_txt: Sequence[int]) -> float:
    """Cosine between the projected image and text embeddings."""
    e_img = encode_image(model, x_img)
    e_txt = encode_text(model, x_txt)
    return T.cosine_similarity(e_img, e_txt).item()


def encode_prefix(model: DualEncoderModel, modality: str, x, layer: int) -> HiddenState:
    if modality == IMAGE:
        return encode_image_prefix(model, x, layer)
    if modality == TEXT:
        return encode_text_prefix(model, x, layer)
    raise ModalityError(f"unknown modality {modality!r}")


def encode_suffix(model: DualEncoderModel, z: HiddenState) -> Tensor:
    if z.modality == IMAGE:
        return encode_image_suffix(model, z)
    return encode_text_suffix(model, z)


def encode_full(model: DualEncoderModel, modality: str, x) -> Tensor:
    if modality == IMAGE:
        return encode_image(model, x)
    if modality == TEXT:
        return encode_text(model, x)
    raise ModalityError(f"unknown modality {modality!r}")
