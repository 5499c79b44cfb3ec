"""Command-line entry points.

Every subcommand is a thin wrapper over one library operation; `predict`
runs the exact function the HTTP service uses, so the probability payload
written here is bitwise-identical to the service's export endpoint.
"""
import argparse
import json
import os
import sys

from .checkpoint import CheckpointError, load_checkpoint
from .data import (
    BandStats,
    ChannelConfig,
    DataError,
    dataset_stats,
    load_manifest,
    load_patch,
    validate_manifest,
)
from .overlay import mask_image, render_overlay, rgb_composite, to_png_bytes
from .registry import ModelRegistry
from .synth import write_synth_dataset
from .train import TrainConfig, benchmark, evaluate, train


def _load_split(manifest_path: str, split: str):
    manifest = load_manifest(manifest_path)
    validate_manifest(manifest)
    if split not in manifest:
        raise DataError(
            f"{manifest_path}: no split {split!r} (found: {sorted(manifest)})"
        )
    base = os.path.dirname(os.path.abspath(manifest_path))
    return [load_patch(os.path.join(base, rel), strict_size=False)
            for rel in manifest[split]]


def _cmd_train(args) -> int:
    config = TrainConfig.from_json(args.config)
    splits = {
        "train": _load_split(args.manifest, "train"),
        "validation": _load_split(args.manifest, "validation"),
    }
    path, history = train(config, splits)
    best = history.epochs[history.best_epoch - 1]
    print(f"best epoch {history.best_epoch}: val_f1={best.val_f1:.4f} -> {path}")
    return 0


def _cmd_eval(args) -> int:
    split = _load_split(args.manifest, args.split)
    row, per_patch = evaluate(args.checkpoint, split,
                              threshold=args.threshold,
                              averaging=args.averaging)
    payload = {"row": row, "per_patch": per_patch,
               "threshold": args.threshold, "averaging": args.averaging}
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_bench(args) -> int:
    registry = ModelRegistry.from_file(args.registry)
    if not registry.entries():
        raise ValueError(f"{args.registry}: registry has no loadable entries")
    split = _load_split(args.manifest, args.split)
    report = benchmark(
        [(e.name, e.checkpoint) for e in registry.entries()], split,
        threshold=args.threshold, averaging=args.averaging,
    )
    csv = report.to_csv()
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as f:
            f.write(csv)
    sys.stdout.write(csv)
    return 0


def _cmd_predict(args) -> int:
    # deferred so plain CLI use never imports the HTTP stack's dependencies
    from .service import run_prediction

    model, header = load_checkpoint(args.checkpoint)
    channels = (ChannelConfig.from_dict(header["channels"])
                if header.get("channels") else ChannelConfig.identity14())
    stats = (BandStats.from_dict(header["band_stats"])
             if header.get("band_stats") else None)
    sample = load_patch(args.input, strict_size=False)
    threshold = model.spec.threshold if args.threshold is None else args.threshold
    probs, mask, fraction = run_prediction(model, channels, stats, sample,
                                           threshold)
    os.makedirs(args.outdir, exist_ok=True)
    rgb = rgb_composite(sample.img)
    outputs = {
        "rgb.png": to_png_bytes(rgb),
        "mask.png": to_png_bytes(mask_image(mask)),
        "overlay.png": to_png_bytes(render_overlay(rgb, mask)),
        "probs.bin": probs.astype("<f4").tobytes(),
    }
    for name, blob in outputs.items():
        with open(os.path.join(args.outdir, name), "wb") as f:
            f.write(blob)
    meta = {
        "shape": list(probs.shape),
        "dtype": "f32le",
        "threshold": threshold,
        "model": (header.get("meta") or {}).get("name")
        or os.path.splitext(os.path.basename(args.checkpoint))[0],
        "landslide_fraction": fraction,
    }
    with open(os.path.join(args.outdir, "meta.json"), "w",
              encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"landslide_fraction={fraction:.6f} -> {args.outdir}")
    return 0


def _cmd_synth(args) -> int:
    manifest = write_synth_dataset(args.out, args.n, size=args.size,
                                   seed=args.seed)
    counts = {k: len(v) for k, v in sorted(manifest.items())}
    print(f"wrote {args.n} patches to {args.out} {counts}")
    return 0


def _cmd_stats(args) -> int:
    samples = []
    manifest = load_manifest(args.manifest)
    base = os.path.dirname(os.path.abspath(args.manifest))
    for split in sorted(manifest):
        for rel in manifest[split]:
            samples.append(load_patch(os.path.join(base, rel),
                                      strict_size=False))
    out = dataset_stats(samples)
    text = json.dumps(out, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    registry_path = args.registry or os.environ.get("LSEG_REGISTRY")
    if not registry_path:
        raise ValueError("no registry: pass --registry or set LSEG_REGISTRY")
    port = args.port if args.port is not None else int(
        os.environ.get("LSEG_PORT", "8000"))
    app = create_app(ModelRegistry.from_file(registry_path),
                     static_dir=args.static)
    uvicorn.run(app, host=args.host, port=port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="landseg",
        description="Landslide segmentation: train, evaluate, and serve.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training job from a JSON config")
    p.add_argument("--config", required=True, help="TrainConfig JSON file")
    p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="score one checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--averaging", choices=("micro", "macro"), default="micro")
    p.add_argument("--out", help="write the JSON report here (default stdout)")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("bench", help="rank every registry model on a split")
    p.add_argument("--registry", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--averaging", choices=("micro", "macro"), default="micro")
    p.add_argument("--out", help="also write the CSV report here")
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("predict", help="segment one patch file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="patch .h5 file")
    p.add_argument("--outdir", required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(fn=_cmd_predict)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("stats", help="summarize a dataset manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="write the JSON summary here (default stdout)")
    p.set_defaults(fn=_cmd_stats)

    p = sub.add_parser("serve", help="start the HTTP prediction service")
    p.add_argument("--registry", help="registry JSON (or LSEG_REGISTRY)")
    p.add_argument("--port", type=int, default=None,
                   help="listen port (or LSEG_PORT; default 8000)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--static", help="directory with the web client to serve")
    p.set_defaults(fn=_cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (DataError, CheckpointError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
