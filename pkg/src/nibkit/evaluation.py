"""Masking-based attribution metrics over a dataset of image-text pairs.

Confidence Drop: mean relative score loss when the input is reweighted by
its normalized saliency (lower is better). Confidence Increase: share of
samples whose score rises under that mask (higher is better). Pairs whose
original score is nonpositive (below 1e-6) make the drop ratio meaningless
and are excluded but counted.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import encoder as enc
from . import tensor as T
from .attribution import AttributionMap, SaliencyImage, _normalize_minmax, upsample_bilinear
from .baselines import M2IBConfig, MethodId, compute_attribution
from .encoder import IMAGE, TEXT, DualEncoderModel
from .errors import ConfigError, DatasetError, ShapeError, TokenError
from .tensor import Tensor

SCORE_FLOOR = 1e-6


@dataclass(frozen=True)
class Sample:
    """One evaluation pair: image tensor, token ids, stable identifier."""

    id: str
    image: np.ndarray
    tokens: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "image", np.asarray(self.image, dtype=np.float64))
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))


@dataclass
class MetricReport:
    method: str
    img_conf_drop: float | None
    img_conf_incr: float | None
    text_conf_drop: float | None
    text_conf_incr: float | None
    fps: float | None
    samples: int
    excluded: int

    def __post_init__(self):
        for v in (self.img_conf_drop, self.text_conf_drop):
            if v is not None and v < 0:
                raise ShapeError(f"confidence drop must be >= 0, got {v}")
        for v in (self.img_conf_incr, self.text_conf_incr):
            if v is not None and not 0 <= v <= 100:
                raise ShapeError(f"confidence increase must lie in [0, 100], got {v}")
        if self.excluded < 0 or self.excluded > self.samples:
            raise ShapeError("excluded count out of range")

    def to_dict(self) -> dict:
        """Fixed key order so serialized reports are byte-stable."""
        return {
            "method": self.method,
            "img_conf_drop": self.img_conf_drop,
            "img_conf_incr": self.img_conf_incr,
            "text_conf_drop": self.text_conf_drop,
            "text_conf_incr": self.text_conf_incr,
            "fps": self.fps,
            "samples": self.samples,
            "excluded": self.excluded,
        }


def apply_image_mask(x: np.ndarray, sal: SaliencyImage) -> np.ndarray:
    """Pixel-wise product with the normalized saliency, broadcast over channels."""
    x = np.asarray(x, dtype=np.float64)
    mask = sal.normalized
    if x.ndim != 3 or x.shape[1:] != mask.shape:
        raise ShapeError(f"image {x.shape} and mask {mask.shape} do not align")
    return x * mask[None, :, :]


def text_mask_weights(amap: AttributionMap, roles: Sequence[str]) -> np.ndarray:
    """Per-token mask weights: min-max of the content scores scattered onto
    content positions; special tokens always keep weight 1."""
    content = [i for i, r in enumerate(roles) if r == "text"]
    if len(content) == 0:
        raise TokenError("no content tokens to mask")
    if len(content) != amap.scores.size:
        raise ShapeError(
            f"map has {amap.scores.size} scores for {len(content)} content tokens"
        )
    weights = np.ones(len(roles))
    weights[np.asarray(content, dtype=np.int64)] = _normalize_minmax(amap.scores)
    return weights


def apply_text_mask(
    model: DualEncoderModel,
    tokens: Sequence[int],
    amap: AttributionMap,
    roles: Sequence[str] | None = None,
) -> np.ndarray:
    """Token embeddings scaled by their normalized saliency weight."""
    emb = enc.text_token_embeddings(model, tokens)
    if roles is None:
        roles = ("text",) * emb.shape[0]
    if len(roles) != emb.shape[0]:
        raise ShapeError(f"{len(roles)} roles for {emb.shape[0]} tokens")
    weights = text_mask_weights(amap, roles)
    return emb * weights[:, None]


def masked_score(model: DualEncoderModel, sample: Sample, amap: AttributionMap) -> float:
    """Similarity after saliency-masking one modality of the pair."""
    if amap.modality == IMAGE:
        sal = upsample_bilinear(amap, sample.image.shape[1], sample.image.shape[2])
        masked = apply_image_mask(sample.image, sal)
        return enc.similarity(model, masked, sample.tokens)
    masked_emb = apply_text_mask(model, sample.tokens, amap)
    e_txt = enc.encode_text(model, sample.tokens, embeddings=Tensor(masked_emb))
    e_img = enc.encode_image(model, sample.image)
    return T.cosine_similarity(e_img, e_txt).item()


def _attribution_for(
    model: DualEncoderModel,
    sample: Sample,
    method: MethodId | str,
    modality: str,
    layer: int,
    num_steps: int,
    m2ib_cfg: M2IBConfig | None,
    seed: int,
) -> AttributionMap:
    return compute_attribution(
        model,
        sample.image,
        sample.tokens,
        method,
        modality,
        layer=layer,
        num_steps=num_steps,
        m2ib_cfg=m2ib_cfg,
        seed=seed,
    )


def scored_pairs(
    model: DualEncoderModel,
    samples: Sequence[Sample],
    method: MethodId | str,
    modality: str,
    layer: int,
    num_steps: int = 10,
    m2ib_cfg: M2IBConfig | None = None,
    seed: int = 0,
) -> tuple[list[tuple[float, float]], int]:
    """(original, masked) score pairs for scored samples plus excluded count."""
    if len(samples) == 0:
        raise DatasetError("empty dataset")
    pairs: list[tuple[float, float]] = []
    excluded = 0
    for sample in samples:
        original = enc.similarity(model, sample.image, sample.tokens)
        if original <= SCORE_FLOOR:
            excluded += 1
            continue
        amap = _attribution_for(model, sample, method, modality, layer, num_steps, m2ib_cfg, seed)
        pairs.append((original, masked_score(model, sample, amap)))
    if not pairs:
        raise DatasetError(f"all {len(samples)} samples excluded (original score <= {SCORE_FLOOR})")
    return pairs, excluded


def confidence_drop(model, samples, method, modality, layer, **kwargs) -> float:
    """Mean of max(0, Y - O)/Y over scored samples, as a percentage."""
    pairs, _ = scored_pairs(model, samples, method, modality, layer, **kwargs)
    drops = [max(0.0, y - o) / y for y, o in pairs]
    return 100.0 * float(np.mean(drops))


def confidence_increase(model, samples, method, modality, layer, **kwargs) -> float:
    """Percentage of scored samples whose masked score exceeds the original."""
    pairs, _ = scored_pairs(model, samples, method, modality, layer, **kwargs)
    return 100.0 * float(np.mean([1.0 if o > y else 0.0 for y, o in pairs]))


def build_report(
    model: DualEncoderModel,
    samples: Sequence[Sample],
    method: MethodId | str,
    layer: int,
    num_steps: int = 10,
    m2ib_cfg: M2IBConfig | None = None,
    seed: int = 0,
    with_fps: bool = False,
) -> MetricReport:
    """Both modalities' confidence metrics for one method, one dataset pass
    per modality; fps is measured separately (image modality) when asked."""
    stats: dict[str, tuple[float, float]] = {}
    excluded = 0
    for modality in (IMAGE, TEXT):
        pairs, excluded = scored_pairs(
            model, samples, method, modality, layer,
            num_steps=num_steps, m2ib_cfg=m2ib_cfg, seed=seed,
        )
        drop = 100.0 * float(np.mean([max(0.0, y - o) / y for y, o in pairs]))
        incr = 100.0 * float(np.mean([1.0 if o > y else 0.0 for y, o in pairs]))
        stats[modality] = (drop, incr)
    fps = None
    if with_fps:
        fps = throughput(
            model, samples, method, IMAGE, layer,
            num_steps=num_steps, m2ib_cfg=m2ib_cfg, seed=seed,
        )
    return MetricReport(
        method=method if isinstance(method, str) else method.value,
        img_conf_drop=stats[IMAGE][0],
        img_conf_incr=stats[IMAGE][1],
        text_conf_drop=stats[TEXT][0],
        text_conf_incr=stats[TEXT][1],
        fps=fps,
        samples=len(samples),
        excluded=excluded,
    )


@dataclass(frozen=True)
class BetaSweepResult:
    betas: tuple[float, ...]
    reports: tuple[MetricReport, ...]

    def drop_column(self, modality: str = IMAGE) -> list[float]:
        key = "img_conf_drop" if modality == IMAGE else "text_conf_drop"
        return [getattr(r, key) for r in self.reports]

    def relative_variation(self, modality: str = IMAGE) -> float:
        col = self.drop_column(modality)
        lo, hi = min(col), max(col)
        denom = max(abs(float(np.mean(col))), 1e-12)
        return (hi - lo) / denom


def beta_sweep(
    model: DualEncoderModel,
    samples: Sequence[Sample],
    betas: Sequence[float],
    base_cfg: M2IBConfig | None = None,
    layer: int = 1,
    with_fps: bool = False,
) -> BetaSweepResult:
    """Metric table for the stochastic bottleneck across trade-off weights."""
    betas = [float(b) for b in betas]
    if len(betas) == 0:
        raise ConfigError("beta grid must not be empty")
    base = base_cfg or M2IBConfig()
    reports = []
    for beta in betas:
        cfg = M2IBConfig(
            beta=beta, lr=base.lr, iters=base.iters,
            noise_var=base.noise_var, noise_samples=base.noise_samples, seed=base.seed,
        )
        reports.append(
            build_report(model, samples, MethodId.M2IB, layer, m2ib_cfg=cfg, with_fps=with_fps)
        )
    return BetaSweepResult(betas=tuple(betas), reports=tuple(reports))


@dataclass(frozen=True)
class SeedVarianceSummary:
    method: str
    seeds: tuple[int, ...]
    max_std: float
    mean_std: float


def seed_variance(
    model: DualEncoderModel,
    samples: Sequence[Sample],
    method: MethodId | str,
    seeds: Sequence[int],
    modality: str,
    layer: int,
    num_steps: int = 10,
) -> SeedVarianceSummary:
    """Elementwise stddev of attribution maps across seeds, summarized."""
    if len(samples) == 0:
        raise DatasetError("empty dataset")
    if len(seeds) < 2:
        raise ConfigError("need at least two seeds to measure variance")
    stds = []
    for sample in samples:
        maps = []
        for seed in seeds:
            cfg = M2IBConfig(seed=int(seed))
            amap = _attribution_for(model, sample, method, modality, layer, num_steps, cfg, int(seed))
            maps.append(amap.scores)
        stacked = np.stack(maps)
        # center on the first map: shift-invariant, and bitwise-identical maps
        # yield an exact zero instead of mean-rounding noise
        stds.append(np.std(stacked - stacked[0], axis=0))
    stacked = np.concatenate(stds)
    return SeedVarianceSummary(
        method=method if isinstance(method, str) else method.value,
        seeds=tuple(int(s) for s in seeds),
        max_std=float(stacked.max()),
        mean_std=float(stacked.mean()),
    )


def throughput(
    model: DualEncoderModel,
    samples: Sequence[Sample],
    method: MethodId | str,
    modality: str,
    layer: int,
    num_steps: int = 10,
    m2ib_cfg: M2IBConfig | None = None,
    seed: int = 0,
) -> float:
    """Single-threaded attributions per second; one warmup run is excluded."""
    if len(samples) == 0:
        raise DatasetError("empty dataset")
    _attribution_for(model, samples[0], method, modality, layer, num_steps, m2ib_cfg, seed)
    start = time.perf_counter()
    for sample in samples:
        _attribution_for(model, sample, method, modality, layer, num_steps, m2ib_cfg, seed)
    elapsed = time.perf_counter() - start
    return len(samples) / elapsed if elapsed > 0 else float("inf")
