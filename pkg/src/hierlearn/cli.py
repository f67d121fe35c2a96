"""Command-line surface: corpus generation, pretraining (with ablation
flags), embedding-space probes, and cross-run report comparison.

Every command resolves its parameters from built-in defaults, then an
optional --config JSON file, then explicit flags, and writes the fully
resolved parameter set as ``run_config.json`` next to its outputs;
re-running a command with that file reproduces the outputs byte-for-byte in
single-worker mode. Exit codes: 0 success, 2 usage error, 1 runtime error.

Set HIERLEARN_CACHE to a directory to cache decoded corpora between runs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .contrastive import StageSchedule, TrainConfig, run_schedule, write_log
from .image import AugmentationConfig, load_image
from .networks import EncoderConfig, build_model_pair, embed_images
from .probes import (
    linear_probe,
    probe_compositionality,
    probe_correspondence,
    probe_locality,
    probe_multires,
)
from .synthdata import SynthConfig, generate_corpus, load_corpus


class ReportSchemaError(ValueError):
    """Probe reports under comparison do not share a schema."""


# ---------------------------------------------------------------------------
# Parameter resolution: defaults < config file < explicit flags
# ---------------------------------------------------------------------------

GEN_DEFAULTS = {
    "out": None,
    "images": 500,
    "classes": 8,
    "size": 64,
    "jitter": 3,
    "noise": 0.02,
    "seed": 0,
}

PRETRAIN_DEFAULTS = {
    "data": None,
    "out": None,
    "schedule": "0:1000,2:1000,4:1000",
    "no_prune": False,
    "fixed_n": None,
    "lr": 0.03,
    "batch_size": 32,
    "bank_capacity": 4096,
    "temperature": 0.2,
    "gamma": 0.8,
    "ema_momentum": 0.999,
    "weight_decay": 1e-4,
    "sgd_momentum": 0.9,
    "input_size": 64,
    "widths": "16,32,64,128",
    "proj_hidden": 128,
    "proj_out": 128,
    "crop_scale": "0.6,1.0",
    "jitter_strength": 0.4,
    "blur_sigma": "0.0,1.5",
    "rotation_degrees": 10.0,
    "reset_bank": False,
    "seed": 0,
    "workers": 1,
}

PROBE_DEFAULTS = {
    "ckpt": None,
    "data": None,
    "out": None,
    "patch_px": 20,
    "arities": "2,3,4",
    "num_patches": 200,
    "grid": 8,
    "threshold": 0.8,
    "levels": "12,20,32",
    "shots": 12,
    "image_a": None,
    "image_b": None,
    "seed": 0,
}


def _resolve(defaults: dict, args: argparse.Namespace, parser: argparse.ArgumentParser) -> dict:
    resolved = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            loaded = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise RuntimeError(f"cannot read config file {config_path}: {exc}")
        for key, value in loaded.items():
            if key in resolved:
                resolved[key] = value
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None and value is not False:
            resolved[key] = value
    for key in ("out",):
        if resolved.get(key) is None:
            parser.error(f"--{key} is required (flag or config file)")
    return resolved


def _write_run_config(out_dir: Path, command: str, resolved: dict) -> None:
    payload = {"command": command, **resolved}
    (out_dir / "run_config.json").write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _csv_ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in str(text).split(","))


def _csv_floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in str(text).split(","))


# ---------------------------------------------------------------------------
# Corpus loading with optional cache
# ---------------------------------------------------------------------------

def load_corpus_images(manifest_path) -> tuple:
    """Load (corpus, list-of-images); images come from the HIERLEARN_CACHE
    .npz pack when available."""
    corpus = load_corpus(manifest_path)
    cache_dir = os.environ.get("HIERLEARN_CACHE")
    if not cache_dir:
        return corpus, corpus.load_all()
    key = hashlib.sha256(Path(manifest_path).read_bytes()).hexdigest()[:32]
    cache_file = Path(cache_dir) / f"corpus_{key}.npz"
    if cache_file.exists():
        packed = np.load(cache_file)["images"]
        return corpus, [packed[i] for i in range(packed.shape[0])]
    images = corpus.load_all()
    shapes = {im.shape for im in images}
    if len(shapes) == 1:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        tmp = cache_file.with_suffix(".tmp.npz")
        np.savez_compressed(tmp, images=np.stack(images))
        tmp.replace(cache_file)
    return corpus, images


def _embedder_from_checkpoint(ckpt_path):
    pair, config = load_checkpoint(ckpt_path)

    def embed_fn(images):
        return embed_images(pair.query.backbone, images)

    return embed_fn, config


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args, parser) -> int:
    p = _resolve(GEN_DEFAULTS, args, parser)
    cfg = SynthConfig(
        image_size=int(p["size"]),
        num_images=int(p["images"]),
        num_structure_classes=int(p["classes"]),
        jitter_px=int(p["jitter"]),
        intensity_noise=float(p["noise"]),
        seed=int(p["seed"]),
    )
    out = Path(p["out"])
    manifest = generate_corpus(cfg, out)
    _write_run_config(out, "gen-data", p)
    print(manifest)
    return 0


def _train_config_from_params(p: dict) -> TrainConfig:
    schedule = StageSchedule.parse(str(p["schedule"]))
    if p["fixed_n"] is not None:
        schedule = StageSchedule(((int(p["fixed_n"]), schedule.total_steps),))
    widths = _csv_ints(p["widths"])
    encoder = EncoderConfig(
        input_size=int(p["input_size"]),
        channel_widths=widths,
        projection_hidden_dim=int(p["proj_hidden"]),
        projection_out_dim=int(p["proj_out"]),
    )
    crop_scale = _csv_floats(p["crop_scale"])
    blur_sigma = _csv_floats(p["blur_sigma"])
    augmentation = AugmentationConfig(
        crop_scale_range=crop_scale,
        jitter_strength=float(p["jitter_strength"]),
        blur_sigma_range=blur_sigma,
        rotation_degrees=float(p["rotation_degrees"]),
        seed=int(p["seed"]),
    )
    return TrainConfig(
        temperature=float(p["temperature"]),
        prune_threshold=float(p["gamma"]),
        bank_capacity=int(p["bank_capacity"]),
        momentum=float(p["ema_momentum"]),
        learning_rate=float(p["lr"]),
        weight_decay=float(p["weight_decay"]),
        sgd_momentum=float(p["sgd_momentum"]),
        batch_size=int(p["batch_size"]),
        schedule=schedule,
        seed=int(p["seed"]),
        encoder=encoder,
        augmentation=augmentation,
        use_pruning=not bool(p["no_prune"]),
        reset_bank_between_stages=bool(p["reset_bank"]),
        workers=int(p["workers"]),
    )


def cmd_pretrain(args, parser) -> int:
    p = _resolve(PRETRAIN_DEFAULTS, args, parser)
    if p["data"] is None:
        parser.error("--data is required (flag or config file)")
    cfg = _train_config_from_params(p)  # validates before any compute
    out = Path(p["out"])
    out.mkdir(parents=True, exist_ok=True)
    _, images = load_corpus_images(p["data"])
    pair = build_model_pair(cfg.encoder, momentum=cfg.momentum, seed=cfg.seed)
    pair, records = run_schedule(pair, images, cfg, checkpoint_dir=out)
    save_checkpoint(pair, cfg, out / "final.edn1")
    write_log(records, out / "log.jsonl")
    _write_run_config(out, "pretrain", p)
    print(out / "final.edn1")
    return 0


def cmd_probe(args, parser) -> int:
    p = _resolve(PROBE_DEFAULTS, args, parser)
    if p["ckpt"] is None:
        parser.error("--ckpt is required (flag or config file)")
    kind = args.probe_kind
    out = Path(p["out"])
    out.mkdir(parents=True, exist_ok=True)
    embed_fn, _ = _embedder_from_checkpoint(p["ckpt"])

    def need_data():
        if p["data"] is None:
            parser.error("--data is required for this probe")
        corpus, _ = load_corpus_images(p["data"])
        return corpus

    if kind == "locality":
        corpus = need_data()
        rep = probe_locality(embed_fn, corpus, patch_px=int(p["patch_px"]))
        (out / "locality_embeddings.tsv").write_text(rep.embeddings_tsv())
        (out / "locality_report.json").write_text(
            json.dumps(rep.to_dict(), indent=1, sort_keys=True) + "\n"
        )
    elif kind == "compositionality":
        corpus = need_data()
        rep = probe_compositionality(
            embed_fn,
            corpus,
            num_patches=int(p["num_patches"]),
            split_arities=_csv_ints(p["arities"]),
            seed=int(p["seed"]),
        )
        (out / "compositionality_samples.tsv").write_text(rep.samples_tsv())
        (out / "compositionality_kde.tsv").write_text(rep.kde_tsv())
        (out / "compositionality_report.json").write_text(
            json.dumps(rep.to_dict(), indent=1, sort_keys=True) + "\n"
        )
    elif kind == "correspondence":
        if p["image_a"] is None or p["image_b"] is None:
            parser.error("correspondence needs --image-a and --image-b")
        img_a = load_image(p["image_a"])
        img_b = load_image(p["image_b"])
        rep = probe_correspondence(
            embed_fn, img_a, img_b, grid=int(p["grid"]), threshold=float(p["threshold"])
        )
        (out / "correspondence_report.json").write_text(
            json.dumps(rep.to_dict(), indent=1, sort_keys=True) + "\n"
        )
    elif kind == "multires":
        corpus = need_data()
        rep = probe_multires(embed_fn, corpus, levels=_csv_ints(p["levels"]))
        (out / "multires_report.json").write_text(
            json.dumps(rep.to_dict(), indent=1, sort_keys=True) + "\n"
        )
    elif kind == "linear":
        corpus = need_data()
        rep = linear_probe(
            embed_fn,
            corpus,
            shots_per_class=int(p["shots"]),
            patch_px=int(p["patch_px"]),
            seed=int(p["seed"]),
        )
        (out / "linear_report.json").write_text(
            json.dumps(rep.to_dict(), indent=1, sort_keys=True) + "\n"
        )
    else:  # pragma: no cover - argparse restricts choices
        parser.error(f"unknown probe {kind!r}")
    _write_run_config(out, f"probe {kind}", p)
    print(out / f"{kind}_report.json")
    return 0


def compare_reports(paths: list[Path]) -> dict:
    """Candidate-vs-baselines comparison of probe reports of one kind."""
    reports = []
    for path in paths:
        data = json.loads(Path(path).read_text())
        if "probe" not in data or "metrics" not in data:
            raise ReportSchemaError(f"{path}: missing 'probe' or 'metrics' field")
        reports.append((str(path), data))
    kinds = {d["probe"] for _, d in reports}
    if len(kinds) != 1:
        raise ReportSchemaError(f"cannot compare different probes: {sorted(kinds)}")
    candidate_path, candidate = reports[0]
    metric_keys = sorted(candidate["metrics"])
    comparisons = []
    for path, data in reports[1:]:
        for key in metric_keys:
            if key not in data["metrics"]:
                raise ReportSchemaError(f"{path}: missing metric {key!r}")
        deltas = {
            key: candidate["metrics"][key] - data["metrics"][key] for key in metric_keys
        }
        status = {
            key: ("PASS" if d > 0 else "TIE" if d == 0 else "FAIL")
            for key, d in deltas.items()
        }
        comparisons.append(
            {"baseline": path, "metrics": data["metrics"], "deltas": deltas, "status": status}
        )
    return {
        "probe": candidate["probe"],
        "candidate": candidate_path,
        "candidate_metrics": candidate["metrics"],
        "comparisons": comparisons,
    }


def format_comparison_table(result: dict) -> str:
    keys = sorted(result["candidate_metrics"])
    lines = [f"probe: {result['probe']}", f"candidate: {result['candidate']}"]
    header = f"{'metric':<30}{'candidate':>14}{'baseline':>14}{'delta':>14}  status"
    for comp in result["comparisons"]:
        lines.append(f"baseline: {comp['baseline']}")
        lines.append(header)
        for key in keys:
            cand = result["candidate_metrics"][key]
            base = comp["metrics"][key]
            delta = comp["deltas"][key]
            lines.append(
                f"{key:<30}{cand:>14.6f}{base:>14.6f}{delta:>+14.6f}  {comp['status'][key]}"
            )
    return "\n".join(lines) + "\n"


def cmd_report(args, parser) -> int:
    if len(args.reports) < 2:
        parser.error("report needs a candidate and at least one baseline")
    out = Path(args.out) if args.out else None
    result = compare_reports([Path(r) for r in args.reports])
    table = format_comparison_table(result)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.json").write_text(json.dumps(result, indent=1, sort_keys=True) + "\n")
        (out / "comparison.txt").write_text(table)
    sys.stdout.write(table)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON file with parameter defaults")
    sub.add_argument("--out", help="output directory")
    sub.add_argument("--seed", type=int, help="random seed")
    sub.add_argument("--workers", type=int, help="data-pipeline worker count")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hierlearn",
        description="hierarchical contrastive pretraining and embedding probes",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    gen = subs.add_parser("gen-data", help="generate a synthetic structured corpus")
    _add_common(gen)
    gen.add_argument("--images", type=int, help="number of images")
    gen.add_argument("--classes", type=int, help="number of structure classes")
    gen.add_argument("--size", type=int, help="image side length in pixels")
    gen.add_argument("--jitter", type=int, help="max landmark displacement in pixels")
    gen.add_argument("--noise", type=float, help="additive intensity noise std")
    gen.set_defaults(func=cmd_gen_data)

    pre = subs.add_parser("pretrain", help="run the coarse-to-fine contrastive schedule")
    _add_common(pre)
    pre.add_argument("--data", help="corpus manifest path")
    pre.add_argument("--schedule", help="stages as n:steps[,n:steps...]")
    pre.add_argument("--no-prune", action="store_true", default=None,
                     help="disable negative pruning (ablation)")
    pre.add_argument("--fixed-n", type=int, dest="fixed_n",
                     help="collapse the schedule into one stage at this granularity")
    pre.add_argument("--lr", type=float, help="base learning rate")
    pre.add_argument("--batch-size", type=int, dest="batch_size")
    pre.add_argument("--bank-capacity", type=int, dest="bank_capacity")
    pre.add_argument("--temperature", type=float)
    pre.add_argument("--gamma", type=float, help="pruning similarity threshold")
    pre.add_argument("--ema-momentum", type=float, dest="ema_momentum")
    pre.add_argument("--weight-decay", type=float, dest="weight_decay")
    pre.add_argument("--sgd-momentum", type=float, dest="sgd_momentum")
    pre.add_argument("--input-size", type=int, dest="input_size")
    pre.add_argument("--widths", help="conv channel widths, comma separated")
    pre.add_argument("--proj-hidden", type=int, dest="proj_hidden")
    pre.add_argument("--proj-out", type=int, dest="proj_out")
    pre.add_argument("--crop-scale", dest="crop_scale", help="lo,hi crop area fractions")
    pre.add_argument("--jitter-strength", type=float, dest="jitter_strength")
    pre.add_argument("--blur-sigma", dest="blur_sigma", help="lo,hi blur sigma range")
    pre.add_argument("--rotation-degrees", type=float, dest="rotation_degrees")
    pre.add_argument("--reset-bank", action="store_true", default=None, dest="reset_bank",
                     help="clear the memory bank at stage boundaries (ablation)")
    pre.set_defaults(func=cmd_pretrain)

    probe = subs.add_parser("probe", help="evaluate a checkpoint")
    probe.add_argument(
        "probe_kind",
        choices=["locality", "compositionality", "correspondence", "multires", "linear"],
    )
    _add_common(probe)
    probe.add_argument("--ckpt", help="checkpoint path")
    probe.add_argument("--data", help="corpus manifest path")
    probe.add_argument("--patch-px", type=int, dest="patch_px")
    probe.add_argument("--arities", help="comma separated subset of 2,3,4")
    probe.add_argument("--num-patches", type=int, dest="num_patches")
    probe.add_argument("--grid", type=int)
    probe.add_argument("--threshold", type=float)
    probe.add_argument("--levels", help="comma separated patch sizes")
    probe.add_argument("--shots", type=int)
    probe.add_argument("--image-a", dest="image_a", help="first image (PGM)")
    probe.add_argument("--image-b", dest="image_b", help="second image (PGM)")
    probe.set_defaults(func=cmd_probe)

    rep = subs.add_parser("report", help="compare probe reports across checkpoints")
    rep.add_argument("reports", nargs="+", help="candidate report then baseline reports")
    rep.add_argument("--config", help="unused, accepted for symmetry")
    rep.add_argument("--out", help="directory for comparison.json/.txt")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except SystemExit:
        raise
    except Exception as exc:  # runtime failures map to exit 1 with a message
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
