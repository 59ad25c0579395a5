"""Heatmap emission: 8-bit binary PGM of the normalized map, a CSV of the
raw signed values on the same lattice, and a JSON metadata sidecar."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .attribution import AttributionMap, upsample_bilinear
from .encoder import IMAGE


def write_pgm(path, normalized: np.ndarray) -> None:
    """Binary (P5) portable graymap, maxval 255."""
    arr = np.asarray(normalized, dtype=np.float64)
    h, w = arr.shape
    pixels = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes(order="C"))


def write_csv(path, raw: np.ndarray) -> None:
    arr = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    lines = [",".join(format(v, ".17g") for v in row) for row in arr]
    Path(path).write_text("\n".join(lines) + "\n")


def write_heatmap(
    out_dir,
    sample_id: str,
    amap: AttributionMap,
    image_hw: tuple[int, int] | None = None,
) -> list[Path]:
    """Write the per-sample output files and return their paths.

    Image maps are upsampled to `image_hw` and emitted as PGM + CSV; text
    maps (no spatial lattice) get CSV only. Metadata always rides along.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{sample_id}.{amap.method}.{amap.modality}"
    written = []

    if amap.modality == IMAGE:
        if image_hw is None:
            raise ValueError("image heatmaps need the target resolution")
        sal = upsample_bilinear(amap, image_hw[0], image_hw[1])
        pgm = out_dir / f"{stem}.pgm"
        write_pgm(pgm, sal.normalized)
        written.append(pgm)
        csv = out_dir / f"{stem}.csv"
        write_csv(csv, sal.raw)
        written.append(csv)
    else:
        csv = out_dir / f"{stem}.csv"
        write_csv(csv, amap.scores)
        written.append(csv)

    meta = {
        "sample_id": sample_id,
        "method": amap.method,
        "modality": amap.modality,
        "layer": amap.layer,
        "num_steps": amap.num_steps,
        "completeness_gap": amap.completeness_gap,
        "s0_degenerate": amap.s0_degenerate,
        "seed": amap.seed,
    }
    meta_path = out_dir / f"{stem}.json"
    meta_path.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    written.append(meta_path)
    return written
