"""Comparison attribution methods.

Input-space gradients (sm / fastig / ig), a token-level Grad-CAM analogue,
a seeded random control, and m2ib: the stochastic per-dimension bottleneck
optimizer whose randomness, nonnegativity, and trade-off sensitivity the
deterministic path method is measured against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import expit

from . import encoder as enc
from . import tensor as T
from .attribution import AttributionMap, PathSpec, nib_attribute
from .encoder import IMAGE, TEXT, DualEncoderModel, HiddenState
from .errors import (
    ConfigError,
    NonFiniteError,
    OptimizationError,
    ShapeError,
    UnknownMethodError,
)
from .tensor import Graph, Tensor


class MethodId(str, Enum):
    NIB = "nib"
    M2IB = "m2ib"
    SM = "sm"
    FASTIG = "fastig"
    IG = "ig"
    GRADCAM = "gradcam"
    RANDOM = "random"


METHOD_NAMES = tuple(m.value for m in MethodId)


def parse_method(name: str) -> MethodId:
    try:
        return MethodId(name)
    except ValueError:
        raise UnknownMethodError(
            f"unknown method {name!r}; expected one of {'|'.join(METHOD_NAMES)}"
        ) from None


@dataclass(frozen=True)
class M2IBConfig:
    """Stochastic bottleneck optimizer settings."""

    beta: float = 0.1
    lr: float = 1.0
    iters: int = 10
    noise_var: float = 1.0
    noise_samples: int = 10
    seed: int = 0

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if self.iters < 1:
            raise ConfigError(f"iters must be >= 1, got {self.iters}")
        if self.noise_samples < 1:
            raise ConfigError(f"noise_samples must be >= 1, got {self.noise_samples}")
        if not self.noise_var > 0:
            raise ConfigError(f"noise_var must be positive, got {self.noise_var}")


def _other_embedding(model: DualEncoderModel, x_img, x_txt, modality: str) -> np.ndarray:
    if modality == IMAGE:
        return enc.encode_text(model, x_txt).data
    return enc.encode_image(model, x_img).data


def _input_leaf(model: DualEncoderModel, x_img, x_txt, modality: str, point: np.ndarray, graph: Graph):
    """Forward from an input-space point held as a graph leaf; returns
    (leaf, projected embedding)."""
    leaf = Tensor(point, graph=graph)
    if modality == IMAGE:
        emb = enc.encode_image(model, leaf)
    else:
        emb = enc.encode_text(model, x_txt, embeddings=leaf)
    return leaf, emb


def _input_space_core(
    model: DualEncoderModel,
    x_img,
    x_txt,
    modality: str,
    num_steps: int,
    baseline: np.ndarray | None,
    method: str,
    record_gap: bool,
) -> AttributionMap:
    """Shared path-gradient loop for sm-style input attributions."""
    other = _other_embedding(model, x_img, x_txt, modality)
    if modality == IMAGE:
        x = np.asarray(x_img, dtype=np.float64)
    else:
        x = enc.text_token_embeddings(model, x_txt)
    x0 = np.zeros_like(x) if baseline is None else np.asarray(baseline, dtype=np.float64)
    if x0.shape != x.shape:
        raise ShapeError(f"baseline shape {x0.shape} != input shape {x.shape}")

    grad_sum = np.zeros_like(x)
    s_end = 0.0
    for k in range(1, num_steps + 1):
        lam = k / num_steps
        point = x0 + lam * (x - x0)
        g = Graph()
        leaf, emb = _input_leaf(model, x_img, x_txt, modality, point, g)
        score = T.cosine_similarity(emb, Tensor(other))
        g.backward(score)
        model.counter.add_backward()
        grad_sum += g.grad(leaf)
        if k == num_steps:
            s_end = score.item()

    contributions = (x - x0) * (grad_sum / num_steps)
    gap = None
    if record_gap:
        g = Graph()
        _, emb0 = _input_leaf(model, x_img, x_txt, modality, x0, g)
        s_start = T.cosine_similarity(emb0, Tensor(other)).item()
        gap = abs(float(contributions.sum()) - (s_end - s_start))

    if modality == IMAGE:
        per_cell = contributions.sum(axis=0)
        grid = per_cell.shape
        scores = per_cell.reshape(-1)
    else:
        scores = contributions.sum(axis=1)
        grid = None
    return AttributionMap(
        method=method,
        modality=modality,
        scores=scores,
        grid=grid,
        layer=None,
        completeness_gap=gap,
        num_steps=num_steps,
    )


def saliency_map(model: DualEncoderModel, x_img, x_txt, modality: str) -> AttributionMap:
    """Absolute score gradient, channel-summed at the input."""
    other = _other_embedding(model, x_img, x_txt, modality)
    if modality == IMAGE:
        x = np.asarray(x_img, dtype=np.float64)
    else:
        x = enc.text_token_embeddings(model, x_txt)
    g = Graph()
    leaf, emb = _input_leaf(model, x_img, x_txt, modality, x, g)
    score = T.cosine_similarity(emb, Tensor(other))
    g.backward(score)
    model.counter.add_backward()
    grad = g.grad(leaf)
    if modality == IMAGE:
        per_cell = np.abs(grad).sum(axis=0)
        return AttributionMap(
            method="sm", modality=modality, scores=per_cell.reshape(-1),
            grid=per_cell.shape, layer=None,
        )
    return AttributionMap(
        method="sm", modality=modality, scores=np.abs(grad).sum(axis=1),
        grid=None, layer=None,
    )


def fast_ig(model: DualEncoderModel, x_img, x_txt, modality: str) -> AttributionMap:
    """Single-step gradient x input against a zero baseline."""
    return _input_space_core(
        model, x_img, x_txt, modality, num_steps=1, baseline=None,
        method="fastig", record_gap=False,
    )


def integrated_gradients(
    model: DualEncoderModel,
    x_img,
    x_txt,
    modality: str,
    num_steps: int,
    baseline: np.ndarray | None = None,
) -> AttributionMap:
    """Mean of path gradients times (input - baseline); the completeness gap
    against the score difference between endpoints is recorded on the map."""
    if num_steps < 1:
        raise ShapeError(f"num_steps must be >= 1, got {num_steps}")
    return _input_space_core(
        model, x_img, x_txt, modality, num_steps=num_steps, baseline=baseline,
        method="ig", record_gap=True,
    )


def gradcam_layer(model: DualEncoderModel, x_img, x_txt, modality: str, layer: int) -> AttributionMap:
    """Token-level Grad-CAM analogue: channel weights are the content-token
    mean of the score gradient; per-token sums pass through a ReLU."""
    other = _other_embedding(model, x_img, x_txt, modality)
    if modality == IMAGE:
        z_hs = enc.encode_image_prefix(model, x_img, layer)
    else:
        z_hs = enc.encode_text_prefix(model, x_txt, layer)
    g = Graph()
    z_leaf = Tensor(z_hs.state.data, graph=g)
    emb = enc.encode_suffix(
        model, HiddenState(state=z_leaf, layer=layer, modality=modality, roles=z_hs.roles)
    )
    score = T.cosine_similarity(emb, Tensor(other))
    g.backward(score)
    model.counter.add_backward()
    grad = g.grad(z_leaf)

    idx = np.asarray(z_hs.content_indices(), dtype=np.int64)
    weights = grad[idx].mean(axis=0)
    raw = z_hs.state.data[idx] @ weights
    scores = np.maximum(raw, 0.0)
    grid = (model.config.grid, model.config.grid) if modality == IMAGE else None
    return AttributionMap(
        method="gradcam", modality=modality, scores=scores, grid=grid, layer=layer,
    )


def random_attribution(shape: tuple[int, ...], seed: int) -> AttributionMap:
    """Seeded uniform scores; the control baseline for metric sanity."""
    rng = np.random.default_rng(seed)
    scores = rng.uniform(0.0, 1.0, size=shape)
    if scores.ndim == 2:
        grid = scores.shape
        modality = IMAGE
    elif scores.ndim == 1:
        grid = None
        modality = TEXT
    else:
        raise ShapeError(f"random attribution shape must be 1-D or 2-D, got {shape}")
    return AttributionMap(
        method="random", modality=modality, scores=scores.reshape(-1),
        grid=grid, layer=None, seed=seed,
    )


def _kl_elements(lam: np.ndarray, z: np.ndarray, var: float) -> np.ndarray:
    """Per-element KL( N(lam z, (1-lam)^2 var) || N(0, var) ) in nats."""
    oml = 1.0 - lam
    with np.errstate(divide="ignore"):
        return 0.5 * (oml * oml + lam * lam * z * z / var - 1.0) - np.log(oml)


def _kl_sum_graph(lam: Tensor, z: np.ndarray, var: float) -> Tensor:
    shape = lam.shape
    one = Tensor(np.ones(shape))
    oml = T.sub(one, lam)
    quad = T.mul(T.mul(lam, lam), Tensor(z * z / var))
    inner = T.add(T.add(T.mul(oml, oml), quad), Tensor(np.full(shape, -1.0)))
    kl = T.sub(T.scale(inner, 0.5), T.log(oml))
    return T.sum_all(kl)


def m2ib_attribute(
    model: DualEncoderModel,
    x_img,
    x_txt,
    layer: int,
    cfg: M2IBConfig,
    modality: str = IMAGE,
) -> AttributionMap:
    """Stochastic per-dimension bottleneck attribution.

    Sigmoid-parameterized gates on both towers' hidden states are tuned by
    gradient ascent on the noise-averaged cosine score minus beta times the
    analytic Gaussian KL. The saliency of a token is its channel-summed KL:
    strictly nonnegative, and dependent on the noise seed.
    """
    enc._check_layer(model, layer)
    rng = np.random.default_rng(cfg.seed)
    sigma = math.sqrt(cfg.noise_var)

    z_img = enc.encode_image_prefix(model, x_img, layer)
    z_txt = enc.encode_text_prefix(model, x_txt, layer)
    states = {IMAGE: z_img, TEXT: z_txt}
    logits = {
        IMAGE: np.full(z_img.state.shape, 5.0),
        TEXT: np.full(z_txt.state.shape, 5.0),
    }

    for it in range(cfg.iters):
        try:
            g = Graph()
            leaves = {m: Tensor(logits[m], graph=g) for m in (IMAGE, TEXT)}
            lams = {m: T.sigmoid(leaves[m]) for m in (IMAGE, TEXT)}
            model.counter.add_forward(2)
            draw_scores = []
            for _ in range(cfg.noise_samples):
                embs = {}
                for m in (IMAGE, TEXT):
                    hs = states[m]
                    eps = rng.normal(0.0, sigma, size=hs.state.shape)
                    gated = T.add(
                        T.mul(lams[m], hs.state),
                        T.mul(T.sub(Tensor(np.ones(hs.state.shape)), lams[m]), Tensor(eps)),
                    )
                    noisy = HiddenState(state=gated, layer=layer, modality=m, roles=hs.roles)
                    embs[m] = enc._image_suffix(model, noisy) if m == IMAGE else enc._text_suffix(model, noisy)
                draw_scores.append(T.cosine_similarity(embs[IMAGE], embs[TEXT]))
            total = draw_scores[0]
            for s in draw_scores[1:]:
                total = T.add(total, s)
            score = T.scale(total, 1.0 / cfg.noise_samples)
            kl = T.add(
                _kl_sum_graph(lams[IMAGE], z_img.state.data, cfg.noise_var),
                _kl_sum_graph(lams[TEXT], z_txt.state.data, cfg.noise_var),
            )
            objective = T.sub(score, T.scale(kl, cfg.beta))
            grads = g.backward(objective)
            model.counter.add_backward(2)
            for m in (IMAGE, TEXT):
                logits[m] = logits[m] + cfg.lr * grads[leaves[m].node_id]
        except NonFiniteError as e:
            raise OptimizationError(
                f"bottleneck optimization diverged: {e}", iteration=it
            ) from e

    hs = states[modality]
    lam_final = expit(logits[modality])
    kl_final = _kl_elements(lam_final, hs.state.data, cfg.noise_var)
    if not np.isfinite(kl_final).all():
        raise OptimizationError(
            "bottleneck gates saturated to a non-finite KL", iteration=cfg.iters
        )
    per_token = kl_final.sum(axis=1)
    idx = np.asarray(hs.content_indices(), dtype=np.int64)
    grid = (model.config.grid, model.config.grid) if modality == IMAGE else None
    return AttributionMap(
        method="m2ib",
        modality=modality,
        scores=per_token[idx],
        grid=grid,
        layer=layer,
        seed=cfg.seed,
        num_steps=cfg.iters,
    )


def compute_attribution(
    model: DualEncoderModel,
    x_img,
    x_txt,
    method: MethodId | str,
    modality: str,
    layer: int,
    num_steps: int = 10,
    m2ib_cfg: M2IBConfig | None = None,
    seed: int = 0,
) -> AttributionMap:
    """Uniform entry point used by the evaluation harness and the CLI."""
    method = parse_method(method if isinstance(method, str) else method.value)
    if method is MethodId.NIB:
        path = PathSpec(num_steps=num_steps, layer=layer, modality=modality)
        return nib_attribute(model, x_img, x_txt, path)
    if method is MethodId.M2IB:
        cfg = m2ib_cfg or M2IBConfig(seed=seed)
        return m2ib_attribute(model, x_img, x_txt, layer, cfg, modality)
    if method is MethodId.SM:
        return saliency_map(model, x_img, x_txt, modality)
    if method is MethodId.FASTIG:
        return fast_ig(model, x_img, x_txt, modality)
    if method is MethodId.IG:
        return integrated_gradients(model, x_img, x_txt, modality, num_steps)
    if method is MethodId.GRADCAM:
        return gradcam_layer(model, x_img, x_txt, modality, layer)
    if method is MethodId.RANDOM:
        if modality == IMAGE:
            shape: tuple[int, ...] = (model.config.grid, model.config.grid)
        else:
            shape = (len(list(x_txt)),)
        return random_attribution(shape, seed)
    raise UnknownMethodError(f"unhandled method {method}")
