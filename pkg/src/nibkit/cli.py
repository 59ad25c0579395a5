"""Command-line surface: toy model/dataset generation, attribution runs,
metric evaluation, numerical property verification, and the trade-off sweep."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .baselines import M2IBConfig, METHOD_NAMES
from .datagen import make_dataset
from .encoder import IMAGE, TEXT, ModelConfig, init_toy
from .errors import NibkitError
from .evaluation import beta_sweep, build_report
from .heatmap import write_heatmap
from .model_io import (
    bottleneck_layer_from_manifest,
    default_bottleneck_layer,
    load_dataset,
    load_model,
    save_dataset,
    save_model,
)
from .verification import run_verification


def _add_model_dataset_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", required=True, help="model manifest JSON")
    p.add_argument("--dataset", required=True, help="dataset manifest JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nibkit",
        description="Deterministic bottleneck-path attribution for dual encoders.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_init = sub.add_parser("init-toy", help="generate a seeded toy model and dataset")
    p_init.add_argument("--seed", type=int, default=0)
    p_init.add_argument("--out", required=True, help="output directory")
    p_init.add_argument("--count", type=int, default=64, help="random pairs (plus one engineered fixture)")

    p_attr = sub.add_parser("attribute", help="write per-sample heatmaps")
    _add_model_dataset_args(p_attr)
    p_attr.add_argument("--method", choices=METHOD_NAMES, default="nib")
    p_attr.add_argument("--modality", choices=(IMAGE, TEXT), default=IMAGE)
    p_attr.add_argument("--layer", type=int, default=None,
                        help="bottleneck layer; defaults to the manifest's declared layer")
    p_attr.add_argument("--num-steps", type=int, default=10)
    p_attr.add_argument("--beta", type=float, default=0.1)
    p_attr.add_argument("--seed", type=int, default=0)
    p_attr.add_argument("--out", required=True)

    p_eval = sub.add_parser("evaluate", help="confidence metrics per method")
    _add_model_dataset_args(p_eval)
    p_eval.add_argument("--methods", required=True, help="comma-separated method names")
    p_eval.add_argument("--layer", type=int, default=None)
    p_eval.add_argument("--num-steps", type=int, default=10)
    p_eval.add_argument("--beta", type=float, default=0.1)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--fps", action="store_true", help="also measure attributions/sec")
    p_eval.add_argument("--out", required=True, help="report JSON path")

    p_verify = sub.add_parser("verify", help="run the numerical property suite")
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--pairs", type=int, default=10)

    p_sweep = sub.add_parser("sweep-beta", help="metric table across trade-off weights")
    _add_model_dataset_args(p_sweep)
    p_sweep.add_argument("--betas", required=True, help="comma-separated values, e.g. 0.01,0.1,0.5")
    p_sweep.add_argument("--layer", type=int, default=None)
    p_sweep.add_argument("--seed", type=int, default=0)
    p_sweep.add_argument("--out", required=True)
    return parser


def _resolve_layer(args) -> int:
    if args.layer is not None:
        return args.layer
    return bottleneck_layer_from_manifest(args.model)


def cmd_init_toy(args) -> int:
    config = ModelConfig()
    model = init_toy(args.seed, config)
    out = Path(args.out)
    manifest = save_model(model, out)
    samples = make_dataset(model, args.seed, count=args.count)
    data_manifest = save_dataset(samples, out)
    print(f"model:   {manifest}")
    print(f"dataset: {data_manifest}  ({len(samples)} samples)")
    return 0


def cmd_attribute(args) -> int:
    from .baselines import compute_attribution

    model = load_model(args.model)
    samples = load_dataset(args.dataset)
    layer = _resolve_layer(args)
    cfg = M2IBConfig(beta=args.beta, seed=args.seed)
    hw = (model.config.image_size, model.config.image_size)
    for sample in sorted(samples, key=lambda s: s.id):
        amap = compute_attribution(
            model, sample.image, sample.tokens, args.method, args.modality,
            layer=layer, num_steps=args.num_steps, m2ib_cfg=cfg, seed=args.seed,
        )
        write_heatmap(args.out, sample.id, amap, image_hw=hw)
    print(f"wrote {len(samples)} heatmaps to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    samples = load_dataset(args.dataset)
    layer = _resolve_layer(args)
    cfg = M2IBConfig(beta=args.beta, seed=args.seed)
    reports = []
    for name in args.methods.split(","):
        name = name.strip()
        report = build_report(
            model, samples, name, layer,
            num_steps=args.num_steps, m2ib_cfg=cfg, seed=args.seed, with_fps=args.fps,
        )
        reports.append(report.to_dict())
        print(json.dumps(report.to_dict()))
    Path(args.out).write_text(json.dumps(reports, indent=2) + "\n")
    return 0


def cmd_verify(args) -> int:
    model = init_toy(args.seed + 7, ModelConfig())
    layer = default_bottleneck_layer(model.config.layers)
    results = run_verification(model, layer, seed=args.seed, n_pairs=args.pairs)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"[{status}] {r.name}: {r.detail}")
        failed += 0 if r.passed else 1
    return 0 if failed == 0 else 1


def cmd_sweep_beta(args) -> int:
    model = load_model(args.model)
    samples = load_dataset(args.dataset)
    layer = _resolve_layer(args)
    betas = [float(b) for b in args.betas.split(",") if b.strip()]
    result = beta_sweep(model, samples, betas, M2IBConfig(seed=args.seed), layer=layer)
    doc = {
        "betas": list(result.betas),
        "reports": [r.to_dict() for r in result.reports],
        "img_drop_relative_variation": result.relative_variation(IMAGE),
    }
    Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    for beta, report in zip(result.betas, result.reports):
        print(f"beta={beta}: img_drop={report.img_conf_drop:.4f} text_drop={report.text_conf_drop:.4f}")
    print(f"relative variation (img drop): {doc['img_drop_relative_variation']:.3f}")
    return 0


_COMMANDS = {
    "init-toy": cmd_init_toy,
    "attribute": cmd_attribute,
    "evaluate": cmd_evaluate,
    "verify": cmd_verify,
    "sweep-beta": cmd_sweep_beta,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except FileNotFoundError as e:
        print(f"error[missing-file]: {e}", file=sys.stderr)
        return 1
    except NibkitError as e:
        print(f"error[{e.code}]: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
