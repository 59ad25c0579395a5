"""Seeded toy dataset construction.

Besides plain random pairs, the generator ships one engineered sample
("adversarial"): an image whose top-left patch block is grafted from an
image that anti-aligns with the caption while the rest aligns well. The
grafted patches pull the score down, which makes the deterministic path
attribution produce strictly negative patch scores there.
"""

from __future__ import annotations

import numpy as np

from .attribution import PathSpec, nib_attribute
from .encoder import IMAGE, DualEncoderModel, ModelConfig, similarity
from .errors import DatasetError
from .evaluation import Sample

ADVERSARIAL_ID = "adversarial"


def make_samples(seed: int, config: ModelConfig, count: int = 64) -> list[Sample]:
    """Random image/token pairs; token lengths vary within max_len."""
    rng = np.random.default_rng(seed)
    shape = (config.channels, config.image_size, config.image_size)
    samples = []
    min_len = min(3, config.max_len)
    for i in range(count):
        image = rng.uniform(0.0, 1.0, size=shape)
        n_tok = int(rng.integers(min_len, config.max_len + 1))
        tokens = tuple(int(t) for t in rng.integers(0, config.vocab, size=n_tok))
        samples.append(Sample(id=f"s{i:03d}", image=image, tokens=tokens))
    return samples


def make_aligned_samples(
    model: DualEncoderModel, seed: int, count: int = 64, caption_draws: int = 12
) -> list[Sample]:
    """Image/token pairs where the tokens are chosen (best of `caption_draws`
    random sequences) to align with the image, mimicking matched captions.
    Metric evaluation needs mostly-positive original scores."""
    cfg = model.config
    rng = np.random.default_rng(seed)
    shape = (cfg.channels, cfg.image_size, cfg.image_size)
    min_len = min(3, cfg.max_len)
    samples = []
    for i in range(count):
        image = rng.uniform(0.0, 1.0, size=shape)
        best_tokens = None
        best_sim = -np.inf
        for _ in range(caption_draws):
            n_tok = int(rng.integers(min_len, cfg.max_len + 1))
            tokens = tuple(int(t) for t in rng.integers(0, cfg.vocab, size=n_tok))
            sim = similarity(model, image, tokens)
            if sim > best_sim:
                best_sim = sim
                best_tokens = tokens
        samples.append(Sample(id=f"s{i:03d}", image=image, tokens=best_tokens))
    return samples


def _graft_block(base: np.ndarray, donor: np.ndarray, patch: int, block: int = 2) -> np.ndarray:
    out = base.copy()
    px = patch * block
    out[:, :px, :px] = donor[:, :px, :px]
    return out


def make_adversarial_sample(
    model: DualEncoderModel,
    seed: int,
    layer: int,
    num_steps: int = 10,
    candidates: int = 40,
    attempts: int = 25,
) -> Sample:
    """Search deterministically for a two-concept image on which the path
    method produces at least one strictly negative patch score AND whose
    saliency mask raises the score (masking suppresses the grafted
    distractor block)."""
    from .evaluation import masked_score

    cfg = model.config
    rng = np.random.default_rng(seed)
    shape = (cfg.channels, cfg.image_size, cfg.image_size)

    for _ in range(attempts):
        tokens = tuple(int(t) for t in rng.integers(0, cfg.vocab, size=cfg.max_len))
        imgs = [rng.uniform(0.0, 1.0, size=shape) for _ in range(candidates)]
        sims = np.array([similarity(model, img, tokens) for img in imgs])
        best = imgs[int(sims.argmax())]
        worst = imgs[int(sims.argmin())]
        if sims.max() <= 0:
            continue
        composite = _graft_block(best, worst, cfg.patch)
        original = similarity(model, composite, tokens)
        if original <= 0:
            continue
        path = PathSpec(num_steps=num_steps, layer=layer, modality=IMAGE)
        amap = nib_attribute(model, composite, tokens, path)
        if float(amap.scores.min()) >= 0.0:
            continue
        sample = Sample(id=ADVERSARIAL_ID, image=composite, tokens=tokens)
        if masked_score(model, sample, amap) > original:
            return sample
    raise DatasetError(
        f"no adversarial fixture found in {attempts} attempts (seed {seed})"
    )


def make_dataset(
    model: DualEncoderModel,
    seed: int,
    count: int = 64,
    layer: int | None = None,
) -> list[Sample]:
    """`count` aligned pairs plus the engineered adversarial fixture."""
    from .model_io import default_bottleneck_layer

    cfg = model.config
    layer = layer or default_bottleneck_layer(cfg.layers)
    samples = make_aligned_samples(model, seed, count)
    samples.append(make_adversarial_sample(model, seed + 1, layer))
    return samples
