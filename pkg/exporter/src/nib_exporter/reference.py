"""Torch reference implementation of the dual-encoder-v1 family.

Written against torch autograd, float64 end to end; used to produce golden
fixtures for cross-implementation validation of any other engine claiming
this weight schema. Semantics mirrored from the family contract: row-major
patch extraction, pre-LN blocks with exact GELU, per-head attention over a
shared hidden width, CLS pooling for images and last-token pooling for
text, cosine scoring of the projected embeddings.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from .schema import EncoderConfig, check_schema

torch.set_grad_enabled(True)


class ReferenceDualEncoder:
    def __init__(self, cfg: EncoderConfig, entries: dict[str, np.ndarray]):
        check_schema(cfg, entries)
        self.cfg = cfg
        self.w = {
            name: torch.from_numpy(np.asarray(arr, dtype=np.float64))
            for name, arr in entries.items()
        }

    # --- building blocks -------------------------------------------------

    def _ln(self, x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
        mean = x.mean(dim=1, keepdim=True)
        centered = x - mean
        var = (centered * centered).mean(dim=1, keepdim=True)
        return centered / torch.sqrt(var + self.cfg.ln_eps) * gain + bias

    def _attention(self, tower: str, i: int, x: torch.Tensor) -> torch.Tensor:
        w = self.w
        b = f"{tower}.block{i}.attn"
        q = x @ w[f"{b}.wq"] + w[f"{b}.bq"]
        k = x @ w[f"{b}.wk"] + w[f"{b}.bk"]
        v = x @ w[f"{b}.wv"] + w[f"{b}.bv"]
        dh = self.cfg.d_model // self.cfg.heads
        heads = []
        for h in range(self.cfg.heads):
            sl = slice(h * dh, (h + 1) * dh)
            logits = q[:, sl] @ k[:, sl].T / math.sqrt(dh)
            heads.append(torch.softmax(logits, dim=1) @ v[:, sl])
        merged = torch.cat(heads, dim=1)
        return merged @ w[f"{b}.wo"] + w[f"{b}.bo"]

    def _block(self, tower: str, i: int, x: torch.Tensor) -> torch.Tensor:
        w = self.w
        b = f"{tower}.block{i}"
        x = x + self._attention(tower, i, self._ln(x, w[f"{b}.ln1.g"], w[f"{b}.ln1.b"]))
        h = self._ln(x, w[f"{b}.ln2.g"], w[f"{b}.ln2.b"])
        h = torch.nn.functional.gelu(h @ w[f"{b}.mlp.w1"] + w[f"{b}.mlp.b1"])
        return x + h @ w[f"{b}.mlp.w2"] + w[f"{b}.mlp.b2"]

    # --- image tower ------------------------------------------------------

    def patchify(self, image: torch.Tensor) -> torch.Tensor:
        c, hh, ww = image.shape
        p = self.cfg.patch
        gh, gw = hh // p, ww // p
        return (
            image.reshape(c, gh, p, gw, p).permute(1, 3, 0, 2, 4).reshape(gh * gw, c * p * p)
        )

    def image_tokens(self, image: torch.Tensor) -> torch.Tensor:
        emb = self.patchify(image) @ self.w["img.patch_proj.w"] + self.w["img.patch_proj.b"]
        tokens = torch.cat([self.w["img.cls"], emb], dim=0)
        return tokens + self.w["img.pos"]

    def image_prefix(self, image: torch.Tensor, layer: int) -> torch.Tensor:
        x = self.image_tokens(image)
        for i in range(layer):
            x = self._block("img", i, x)
        return x

    def image_suffix(self, hidden: torch.Tensor, layer: int) -> torch.Tensor:
        x = hidden
        for i in range(layer, self.cfg.layers):
            x = self._block("img", i, x)
        x = self._ln(x, self.w["img.ln_f.g"], self.w["img.ln_f.b"])
        return x[0] @ self.w["img.proj"]

    def encode_image(self, image: torch.Tensor) -> torch.Tensor:
        return self.image_suffix(self.image_prefix(image, self.cfg.layers), self.cfg.layers)

    # --- text tower ---------------------------------------------------------

    def text_prefix(self, ids, layer: int) -> torch.Tensor:
        ids = torch.as_tensor(list(ids), dtype=torch.long)
        x = self.w["txt.tok"][ids] + self.w["txt.pos"][: ids.shape[0]]
        for i in range(layer):
            x = self._block("txt", i, x)
        return x

    def text_suffix(self, hidden: torch.Tensor, layer: int) -> torch.Tensor:
        x = hidden
        for i in range(layer, self.cfg.layers):
            x = self._block("txt", i, x)
        x = self._ln(x, self.w["txt.ln_f.g"], self.w["txt.ln_f.b"])
        return x[-1] @ self.w["txt.proj"]

    def encode_text(self, ids) -> torch.Tensor:
        return self.text_suffix(self.text_prefix(ids, self.cfg.layers), self.cfg.layers)

    # --- scoring and attribution ---------------------------------------------

    @staticmethod
    def cosine(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        return (u @ v) / (torch.linalg.norm(u) * torch.linalg.norm(v))

    def similarity(self, image, ids) -> float:
        return float(self.cosine(self.encode_image(self._img(image)), self.encode_text(ids)))

    @staticmethod
    def _img(image) -> torch.Tensor:
        if isinstance(image, torch.Tensor):
            return image.to(torch.float64)
        return torch.from_numpy(np.asarray(image, dtype=np.float64))

    def narrowed_scores(self, image, ids, layer: int, lams) -> np.ndarray:
        """Suffix score at each bottleneck scale, no gradients."""
        with torch.no_grad():
            z = self.image_prefix(self._img(image), layer)
            other = self.encode_text(ids)
            return np.array([
                float(self.cosine(self.image_suffix(lam * z, layer), other)) for lam in lams
            ])

    def path_attribution(self, image, ids, layer: int, num_steps: int):
        """Right-endpoint bottleneck-path attribution for the image modality.

        Returns (patch scores, completeness gap)."""
        with torch.no_grad():
            z = self.image_prefix(self._img(image), layer).detach()
            other = self.encode_text(ids).detach()
        grad_sum = torch.zeros_like(z)
        s_open = 0.0
        for k in range(1, num_steps + 1):
            lam = k / num_steps
            leaf = (lam * z).detach().requires_grad_(True)
            score = self.cosine(self.image_suffix(leaf, layer), other)
            (grad,) = torch.autograd.grad(score, leaf)
            grad_sum += grad
            if k == num_steps:
                s_open = float(score.detach())
        contributions = z * (grad_sum / num_steps)
        with torch.no_grad():
            s_closed = float(self.cosine(self.image_suffix(torch.zeros_like(z), layer), other))
        gap = abs(float(contributions.sum()) - (s_open - s_closed))
        return contributions.sum(dim=1)[1:].numpy(), gap

    def saliency(self, image, ids) -> np.ndarray:
        leaf = self._img(image).requires_grad_(True)
        score = self.cosine(self.image_suffix(self.image_prefix(leaf, self.cfg.layers), self.cfg.layers),
                            self.encode_text(ids))
        (grad,) = torch.autograd.grad(score, leaf)
        return grad.abs().sum(dim=0).reshape(-1).numpy()

    def gradient_times_input(self, image, ids) -> np.ndarray:
        leaf = self._img(image).requires_grad_(True)
        score = self.cosine(self.image_suffix(self.image_prefix(leaf, self.cfg.layers), self.cfg.layers),
                            self.encode_text(ids))
        (grad,) = torch.autograd.grad(score, leaf)
        return (leaf.detach() * grad).sum(dim=0).reshape(-1).numpy()

    def gradcam(self, image, ids, layer: int) -> np.ndarray:
        with torch.no_grad():
            z = self.image_prefix(self._img(image), layer).detach()
            other = self.encode_text(ids).detach()
        leaf = z.clone().requires_grad_(True)
        score = self.cosine(self.image_suffix(leaf, layer), other)
        (grad,) = torch.autograd.grad(score, leaf)
        weights = grad[1:].mean(dim=0)
        raw = z[1:] @ weights
        return torch.clamp(raw, min=0.0).numpy()
