"""Narrowing-bottleneck attribution.

The hidden state z at layer l is swept along the deterministic path
z~(lam) = lam * z for lam on a right-endpoint Riemann grid k/m, k = 1..m.
Per-element contributions z_ic * mean_k dS/dz~_ic accumulate into signed
per-token scores, and their total is checked against S(1) - S(0) (the
completeness residual recorded on every map). No randomness anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import encoder as enc
from . import tensor as T
from .encoder import IMAGE, TEXT, DualEncoderModel, HiddenState
from .errors import DegenerateInputError, ModalityError, ShapeError
from .tensor import Graph, Tensor

S0_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class PathSpec:
    """Bottleneck sweep: step count, endpoint rule, split layer, modality."""

    num_steps: int
    layer: int
    modality: str
    scheme: str = "right"

    def __post_init__(self):
        if self.num_steps < 1:
            raise ShapeError(f"num_steps must be >= 1, got {self.num_steps}")
        if self.layer < 1:
            raise ShapeError(f"layer must be >= 1, got {self.layer}")
        if self.modality not in (IMAGE, TEXT):
            raise ModalityError(f"unknown modality {self.modality!r}")
        if self.scheme != "right":
            raise ShapeError(f"unsupported Riemann scheme {self.scheme!r}")


@dataclass
class AttributionMap:
    """Signed per-token importance. CLS/special tokens take part in the path
    and the completeness sum but are dropped from `scores`."""

    method: str
    modality: str
    scores: np.ndarray
    grid: tuple[int, int] | None
    layer: int | None
    completeness_gap: float | None = None
    s0_degenerate: bool = False
    seed: int | None = None
    num_steps: int | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if self.grid is not None and self.grid[0] * self.grid[1] != self.scores.size:
            raise ShapeError(
                f"grid {self.grid} incompatible with {self.scores.size} scores"
            )


def _normalize_minmax(raw: np.ndarray) -> np.ndarray:
    """Min-max to [0, 1]; a constant map has no ordering information and
    normalizes to all-ones (mask keeps the input)."""
    lo = float(raw.min())
    hi = float(raw.max())
    if hi - lo < 1e-300:
        return np.ones_like(raw)
    return (raw - lo) / (hi - lo)


@dataclass
class SaliencyImage:
    """Input-resolution saliency: signed raw values plus a min-max view."""

    raw: np.ndarray

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.float64)
        if self.raw.ndim != 2:
            raise ShapeError("saliency image must be 2-D")

    @property
    def normalized(self) -> np.ndarray:
        return _normalize_minmax(self.raw)


def _zero_state(model: DualEncoderModel, modality: str, layer: int, tokens: int) -> HiddenState:
    if modality == IMAGE:
        roles = ("cls",) + ("patch",) * (tokens - 1)
    else:
        roles = ("text",) * tokens
    return HiddenState(
        state=Tensor(np.zeros((tokens, model.config.d_model))),
        layer=layer,
        modality=modality,
        roles=roles,
    )


def zero_state_embedding(model: DualEncoderModel, modality: str, layer: int, tokens: int) -> np.ndarray:
    """Suffix embedding of the all-zero hidden state. Input-independent, so it
    is computed once per (modality, layer, token count) and cached; only the
    cache miss costs a forward pass."""
    key = (modality, layer, tokens)
    cached = model.zero_embed_cache.get(key)
    if cached is None:
        emb = enc.encode_suffix(model, _zero_state(model, modality, layer, tokens))
        cached = emb.data.copy()
        model.zero_embed_cache[key] = cached
    return cached


def closed_bottleneck_score(
    model: DualEncoderModel, modality: str, layer: int, tokens: int, other_embedding: np.ndarray
) -> tuple[float, bool]:
    """Score with the bottleneck fully closed. A suffix embedding with norm
    below 1e-12 makes the cosine meaningless; the score is then pinned to 0
    and flagged degenerate."""
    emb = zero_state_embedding(model, modality, layer, tokens)
    norm_e = float(np.linalg.norm(emb))
    norm_o = float(np.linalg.norm(other_embedding))
    if norm_e < S0_NORM_FLOOR or norm_o < S0_NORM_FLOOR:
        return 0.0, True
    return float(emb @ other_embedding / (norm_e * norm_o)), False


def narrowed_score(
    model: DualEncoderModel, z: HiddenState, lam: float, other_embedding: np.ndarray
) -> float:
    """Cosine between suffix(lam * z) and the other modality's embedding."""
    if not 0.0 <= lam <= 1.0:
        raise DegenerateInputError(f"bottleneck scale must lie in [0, 1], got {lam}")
    scaled = replace(z, state=T.scale(z.state, lam))
    emb = enc.encode_suffix(model, scaled)
    return T.cosine_similarity(emb, Tensor(other_embedding)).item()


def _content_view(z: HiddenState, per_token: np.ndarray) -> np.ndarray:
    idx = z.content_indices()
    return per_token[np.asarray(idx, dtype=np.int64)]


def nib_attribute(model: DualEncoderModel, x_img, x_txt, path: PathSpec) -> AttributionMap:
    """Deterministic bottleneck-path attribution at `path.layer`.

    Per attribution: one forward for the opposite tower, one prefix forward
    for the attributed tower, and num_steps suffix forward/backward pairs.
    """
    enc._check_layer(model, path.layer)
    if path.modality == IMAGE:
        other = enc.encode_text(model, x_txt).data
        z_hs = enc.encode_image_prefix(model, x_img, path.layer)
    else:
        other = enc.encode_image(model, x_img).data
        z_hs = enc.encode_text_prefix(model, x_txt, path.layer)

    z = z_hs.state.data
    m = path.num_steps
    grad_sum = np.zeros_like(z)
    s_open = 0.0
    for k in range(1, m + 1):
        lam = k / m
        g = Graph()
        z_leaf = Tensor(lam * z, graph=g)
        emb = enc.encode_suffix(
            model, replace(z_hs, state=z_leaf)
        )
        score = T.cosine_similarity(emb, Tensor(other))
        grads = g.backward(score)
        model.counter.add_backward()
        grad_sum += grads[z_leaf.node_id]
        if k == m:
            s_open = score.item()

    contributions = z * (grad_sum / m)
    s_closed, degenerate = closed_bottleneck_score(
        model, path.modality, path.layer, z.shape[0], other
    )
    gap = abs(float(contributions.sum()) - (s_open - s_closed))
    per_token = contributions.sum(axis=1)
    scores = _content_view(z_hs, per_token)
    grid = (model.config.grid, model.config.grid) if path.modality == IMAGE else None
    return AttributionMap(
        method="nib",
        modality=path.modality,
        scores=scores,
        grid=grid,
        layer=path.layer,
        completeness_gap=gap,
        s0_degenerate=degenerate,
        num_steps=m,
    )


def upsample_bilinear(amap: AttributionMap, height: int, width: int) -> SaliencyImage:
    """Interpolate a spatial score lattice to input resolution (half-pixel
    centers, clamp-to-edge; the align-corners-false convention)."""
    if amap.grid is None:
        raise ModalityError("cannot upsample a non-spatial attribution map")
    if height < 1 or width < 1:
        raise ShapeError(f"target size {height}x{width} invalid")
    gh, gw = amap.grid
    cells = amap.scores.reshape(gh, gw)

    ys = (np.arange(height) + 0.5) * (gh / height) - 0.5
    xs = (np.arange(width) + 0.5) * (gw / width) - 0.5
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    ty = ys - y0
    tx = xs - x0
    y0c = np.clip(y0.astype(np.int64), 0, gh - 1)
    y1c = np.clip(y0.astype(np.int64) + 1, 0, gh - 1)
    x0c = np.clip(x0.astype(np.int64), 0, gw - 1)
    x1c = np.clip(x0.astype(np.int64) + 1, 0, gw - 1)

    top = cells[np.ix_(y0c, x0c)] * (1 - tx) + cells[np.ix_(y0c, x1c)] * tx
    bot = cells[np.ix_(y1c, x0c)] * (1 - tx) + cells[np.ix_(y1c, x1c)] * tx
    raw = top * (1 - ty)[:, None] + bot * ty[:, None]
    return SaliencyImage(raw=raw)


def _with_identity_block(model: DualEncoderModel, at_layer: int) -> DualEncoderModel:
    """Insert a no-op block after `at_layer` in both towers: its attention and
    MLP output projections are zero, so residuals pass through bitwise. The
    towers share one depth in the config, hence the symmetric insertion."""
    cfg = model.config
    new_cfg = enc.ModelConfig(
        image_size=cfg.image_size,
        channels=cfg.channels,
        patch=cfg.patch,
        d_model=cfg.d_model,
        heads=cfg.heads,
        layers=cfg.layers + 1,
        proj_dim=cfg.proj_dim,
        vocab=cfg.vocab,
        max_len=cfg.max_len,
        ln_eps=cfg.ln_eps,
    )
    schema = enc.weight_schema(new_cfg)
    arrays: dict[str, np.ndarray] = {}
    for name, shape in schema.items():
        if ".block" in name:
            tower, rest = name.split(".block", 1)
            idx_str, leaf = rest.split(".", 1)
            idx = int(idx_str)
            if idx < at_layer:
                arrays[name] = model.weights[name].data
            elif idx == at_layer:
                arrays[name] = np.ones(shape) if leaf.endswith(".g") else np.zeros(shape)
            else:
                arrays[name] = model.weights[f"{tower}.block{idx - 1}.{leaf}"].data
        else:
            arrays[name] = model.weights[name].data
    return enc.model_from_weights(new_cfg, arrays)


def _with_rescaled_projection(model: DualEncoderModel, tower: str, factor: float) -> DualEncoderModel:
    """Scale the final LN affine by `factor` and the projection by 1/factor:
    a functionally identical reparameterization of the same encoder."""
    arrays = {name: w.data for name, w in model.weights.items()}
    arrays[f"{tower}.ln_f.g"] = arrays[f"{tower}.ln_f.g"] * factor
    arrays[f"{tower}.ln_f.b"] = arrays[f"{tower}.ln_f.b"] * factor
    arrays[f"{tower}.proj"] = arrays[f"{tower}.proj"] / factor
    return enc.model_from_weights(model.config, arrays)


def implementation_invariance_probe(
    model: DualEncoderModel, x_img, x_txt, path: PathSpec, tol: float = 1e-9
) -> bool:
    """Attribute with two functionally identical reparameterizations of the
    model (an inserted identity block after the split layer, and a rescaled
    then inverse-rescaled projection) and require equal maps within `tol`."""
    tower = "img" if path.modality == IMAGE else "txt"
    base = nib_attribute(model, x_img, x_txt, path)
    variants = [
        _with_identity_block(model, path.layer),
        _with_rescaled_projection(model, tower, 1.7),
    ]
    for variant in variants:
        vmap = nib_attribute(variant, x_img, x_txt, path)
        if vmap.scores.shape != base.scores.shape:
            return False
        if float(np.abs(vmap.scores - base.scores).max()) > tol:
            return False
    return True
