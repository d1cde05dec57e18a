"""Command-line entry point.

The module deliberately avoids importing numpy at the top level: the
worker/thread environment must be pinned before the numerics stack loads,
so heavy imports happen inside main() after the --threads flag (or the
SAIL_ALIGN_THREADS variable) has been read.

Exit codes: 0 success, 1 validation/usage errors (single-line diagnostic
on stderr), 2 internal errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


def _pin_blas_single_threaded() -> None:
    # our own fixed-chunk pool owns parallelism; BLAS threading would make
    # results depend on the host's core count
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, "1")


def _scan_threads(argv: list[str]) -> int | None:
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            return int(argv[i + 1]) if argv[i + 1].isdigit() else None
        if arg.startswith("--threads="):
            value = arg.split("=", 1)[1]
            return int(value) if value.isdigit() else None
    env = os.environ.get("SAIL_ALIGN_THREADS", "")
    return int(env) if env.isdigit() else None


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="worker pool cap (default: logical CPU count)")

    parser = argparse.ArgumentParser(
        prog="sail-align",
        description="Train and evaluate alignment heads over pre-encoded embeddings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", parents=[common], help="summarize an SEB1 file")
    p.add_argument("path")

    p = sub.add_parser("train", parents=[common], help="train alignment heads")
    p.add_argument("--config", required=True, help="TOML-style training config")
    p.add_argument("--images", required=True)
    p.add_argument("--texts", required=True)
    p.add_argument("--hq-texts", default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)

    p = sub.add_parser("eval-retrieval", parents=[common],
                       help="R@K retrieval over a paired eval set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--texts", required=True)
    p.add_argument("--ks", default="1,5,10", help="comma-separated K values")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval-classify", parents=[common],
                       help="zero-shot classification with prompt-ensemble prototypes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--prompts", required=True, help="prompt embeddings (SEB1)")
    p.add_argument("--prompt-labels", required=True,
                   help="class index per prompt row (SEB1 dim=1)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval-knn", parents=[common],
                       help="k-NN probe on raw embedding quality")
    p.add_argument("--train-embeds", required=True)
    p.add_argument("--train-labels", required=True)
    p.add_argument("--test-embeds", required=True)
    p.add_argument("--test-labels", required=True)
    p.add_argument("--ks", default="20", help="comma-separated neighbor counts")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval-winoground", parents=[common],
                       help="text/image/group scores over similarity quads")
    p.add_argument("--quads", required=True, help="quad CSV")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval-mmvp", parents=[common],
                       help="paired-image matching score over similarity quads")
    p.add_argument("--quads", required=True)
    p.add_argument("--pair-images", nargs=2, metavar=("A", "B"), default=None,
                   help="two row-aligned SEB1 files for cosine distribution analysis")
    p.add_argument("--checkpoint", default=None,
                   help="project --pair-images through the image head first")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval-segment", parents=[common],
                       help="open-vocabulary segmentation of patch embeddings")
    p.add_argument("--patches", required=True, help="patch embeddings (manifest h,w)")
    p.add_argument("--classes", required=True, help="class text embeddings")
    p.add_argument("--ground-truth", required=True,
                   help="SEB1 dim=1 grid (manifest h,w,n_classes)")
    p.add_argument("--checkpoint", default=None,
                   help="project patches/classes through the trained heads")
    p.add_argument("--out", required=True)

    p = sub.add_parser("probe-report", parents=[common],
                       help="correlation report over probe records")
    p.add_argument("--records", required=True,
                   help="CSV: model_name,predictor_score,alignment_score")
    p.add_argument("--out", required=True)

    return parser


def _write_run_manifest(out_dir: Path, command: str, inputs: dict, seed=None) -> None:
    payload = {"command": command, "inputs": inputs, "root_seed": seed}
    (out_dir / "run.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _parse_ks(text: str) -> list[int]:
    from .errors import ConfigError

    try:
        ks = sorted({int(part) for part in text.split(",") if part.strip()})
    except ValueError:
        raise ConfigError(f"--ks must be comma-separated integers, got {text!r}") from None
    if not ks or any(k < 1 for k in ks):
        raise ConfigError(f"--ks must be positive integers, got {text!r}")
    return ks


def _cmd_inspect(args) -> int:
    from . import embed_store

    matrix = embed_store.read_embeddings(args.path)
    print(f"{args.path}: n_rows={matrix.n_rows} dim={matrix.dim} crc=OK")
    manifest = embed_store.read_manifest(args.path)
    if manifest:
        keys = {k: v for k, v in sorted(manifest.items()) if k != "ids"}
        if "ids" in manifest:
            keys["ids"] = f"<{len(manifest['ids'])} entries>"
        print("manifest: " + json.dumps(keys, sort_keys=True))
    else:
        print("manifest: none")
    return 0


def _cmd_train(args) -> int:
    from . import config as config_mod
    from . import embed_store, trainer

    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    cfg = config_mod.train_config_from_file(args.config, overrides)

    dataset = embed_store.load_paired_dataset(args.images, args.texts, args.hq_texts)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    state = trainer.train(dataset, cfg, metrics_path=out_dir / "metrics.jsonl")
    trainer.save_checkpoint(state, out_dir / "checkpoint.bin")
    _write_run_manifest(
        out_dir, "train",
        {"config": args.config, "images": args.images, "texts": args.texts,
         "hq_texts": args.hq_texts},
        seed=cfg.seed,
    )
    print(f"trained {state.epoch} epochs ({state.step} steps); "
          f"final epoch mean loss {state.epoch_losses[-1]:.6f}")
    print(f"checkpoint: {out_dir / 'checkpoint.bin'}")
    return 0


def _load_state(path: str):
    from . import trainer

    return trainer.load_checkpoint(path)


def _cmd_eval_retrieval(args) -> int:
    from . import embed_store, evalsuite, reporting, trainer

    state = _load_state(args.checkpoint)
    images = embed_store.read_embeddings(args.images)
    texts = embed_store.read_embeddings(args.texts)
    ks = _parse_ks(args.ks)
    proj_images = trainer.embed_with_head(state, "image", images.data)
    proj_texts = trainer.embed_with_head(state, "text", texts.data)
    report = evalsuite.retrieval_report(proj_images, proj_texts, ks)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in ks:
        rows.append(["i2t", k, report.i2t_recall_at[k]])
        rows.append(["t2i", k, report.t2i_recall_at[k]])
        rows.append(["average", k, report.average_recall_at(k)])
    reporting.write_csv(out_dir / "report.csv", ["direction", "k", "recall"], rows)
    reporting.plot_recall_bars(report, out_dir / "plots" / "recall.svg")
    _write_run_manifest(out_dir, "eval-retrieval",
                        {"checkpoint": args.checkpoint, "images": args.images,
                         "texts": args.texts, "ks": ks})
    print(reporting.format_table(["direction", "k", "recall"], rows))
    return 0


def _cmd_eval_classify(args) -> int:
    from . import embed_store, evalsuite, reporting, trainer

    state = _load_state(args.checkpoint)
    test = embed_store.load_labeled_dataset(args.images, args.labels)
    prompts = embed_store.load_labeled_dataset(args.prompts, args.prompt_labels)

    proj_prompts = trainer.embed_with_head(state, "text", prompts.embeddings.data)
    grouped = [proj_prompts[prompts.labels == c] for c in range(prompts.n_classes)]
    prototypes, degenerate = evalsuite.build_prototypes(grouped)
    proj_images = trainer.embed_with_head(state, "image", test.embeddings.data)
    accuracy = evalsuite.zeroshot_classify(proj_images, prototypes, test.labels)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [["top1_accuracy", accuracy], ["n_images", test.embeddings.n_rows],
            ["n_classes", prompts.n_classes], ["degenerate_classes", len(degenerate)]]
    reporting.write_csv(out_dir / "report.csv", ["metric", "value"], rows)
    reporting.plot_score_bars({"top-1": accuracy}, "zero-shot classification",
                              out_dir / "plots" / "classify.svg", ylabel="accuracy")
    _write_run_manifest(out_dir, "eval-classify",
                        {"checkpoint": args.checkpoint, "images": args.images,
                         "labels": args.labels, "prompts": args.prompts,
                         "prompt_labels": args.prompt_labels})
    print(reporting.format_table(["metric", "value"], rows))
    return 0


def _cmd_eval_knn(args) -> int:
    from . import embed_store, evalsuite, reporting

    train = embed_store.load_labeled_dataset(args.train_embeds, args.train_labels)
    test = embed_store.load_labeled_dataset(args.test_embeds, args.test_labels)
    ks = _parse_ks(args.ks)
    accuracies = {k: evalsuite.knn_classify(train, test, k) for k in ks}

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [[k, accuracies[k]] for k in ks]
    reporting.write_csv(out_dir / "report.csv", ["k", "top1_accuracy"], rows)
    reporting.plot_score_bars({f"k={k}": accuracies[k] for k in ks},
                              "k-NN probe accuracy", out_dir / "plots" / "knn.svg",
                              ylabel="accuracy")
    _write_run_manifest(out_dir, "eval-knn",
                        {"train_embeds": args.train_embeds, "test_embeds": args.test_embeds,
                         "ks": ks})
    print(reporting.format_table(["k", "top1_accuracy"], rows))
    return 0


def _cmd_eval_winoground(args) -> int:
    from . import evalsuite, reporting

    quads = evalsuite.load_quads_csv(args.quads)
    report = evalsuite.winoground_score(quads)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [["text", report.text_score], ["image", report.image_score],
            ["group", report.group_score], ["n_examples", report.n_examples]]
    reporting.write_csv(out_dir / "report.csv", ["metric", "value"], rows)
    reporting.plot_winoground_bars(report, out_dir / "plots" / "winoground.svg")
    _write_run_manifest(out_dir, "eval-winoground", {"quads": args.quads})
    print(reporting.format_table(["metric", "value"], rows))
    return 0


def _cmd_eval_mmvp(args) -> int:
    from . import embed_store, evalsuite, reporting, trainer

    quads = evalsuite.load_quads_csv(args.quads)
    score = evalsuite.mmvp_pair_score(quads)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [["mmvp_score", score], ["n_examples", len(quads)]]
    patterns = sorted({q.pattern for q in quads if q.pattern})
    for pattern in patterns:
        subset = [q for q in quads if q.pattern == pattern]
        rows.append([f"pattern:{pattern}", evalsuite.mmvp_pair_score(subset)])

    if args.pair_images:
        a = embed_store.read_embeddings(args.pair_images[0]).data
        b = embed_store.read_embeddings(args.pair_images[1]).data
        if args.checkpoint:
            state = _load_state(args.checkpoint)
            a = trainer.embed_with_head(state, "image", a)
            b = trainer.embed_with_head(state, "image", b)
        summary = evalsuite.pair_cosine_analysis(a, b)
        rows.append(["pair_cosine_mean", summary.mean])
        rows.extend([f"pair_cosine_p{p}", v] for p, v in sorted(summary.deciles.items()))
        reporting.plot_cosine_histogram(summary, out_dir / "plots" / "pair_cosines.svg",
                                        title="image-image cosine similarity")

    reporting.write_csv(out_dir / "report.csv", ["metric", "value"], rows)
    reporting.plot_score_bars({"mmvp": score}, "paired-image matching score",
                              out_dir / "plots" / "mmvp.svg", ylabel="percent")
    _write_run_manifest(out_dir, "eval-mmvp",
                        {"quads": args.quads, "pair_images": args.pair_images,
                         "checkpoint": args.checkpoint})
    print(reporting.format_table(["metric", "value"], rows))
    return 0


def _cmd_eval_segment(args) -> int:
    import numpy as np

    from . import embed_store, evalsuite, reporting, trainer
    from .errors import FormatError

    patches = embed_store.read_embeddings(args.patches)
    classes = embed_store.read_embeddings(args.classes)
    gt_mat = embed_store.read_embeddings(args.ground_truth)
    gt_manifest = embed_store.read_manifest(args.ground_truth) or {}
    if "h" not in gt_manifest or "w" not in gt_manifest:
        raise FormatError(f"{args.ground_truth}: manifest must carry h and w")
    h, w = int(gt_manifest["h"]), int(gt_manifest["w"])

    patch_data = patches.data
    patch_manifest = embed_store.read_manifest(args.patches) or {}
    if patch_manifest.get("has_cls_token"):
        patch_data = patch_data[1:]  # global token is carried but unused here

    class_data = classes.data
    if args.checkpoint:
        state = _load_state(args.checkpoint)
        patch_data = trainer.embed_with_head(state, "image", patch_data)
        class_data = trainer.embed_with_head(state, "text", class_data)

    gt = gt_mat.data.reshape(h, w).astype(np.int64)
    inp = evalsuite.SegmentationInput(
        patch_embeddings=patch_data, class_text_embeddings=class_data,
        ground_truth=gt, h=h, w=w,
    )
    mask, miou = evalsuite.segment(inp)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    embed_store.write_embeddings(
        embed_store.EmbeddingMatrix(mask.reshape(-1, 1).astype(np.float32)),
        out_dir / "mask.seb1",
        manifest={"h": h, "w": w, "n_classes": int(class_data.shape[0]),
                  "created_unix_ms": 0},
    )
    ious = evalsuite.per_class_iou(mask, gt)
    rows = [["miou", miou]] + [[f"iou_class_{c}", v] for c, v in sorted(ious.items())]
    reporting.write_csv(out_dir / "report.csv", ["metric", "value"], rows)
    reporting.plot_score_bars({f"class {c}": v for c, v in sorted(ious.items())},
                              f"per-class IoU (mIoU={miou:.3f})",
                              out_dir / "plots" / "segment.svg", ylabel="IoU")
    _write_run_manifest(out_dir, "eval-segment",
                        {"patches": args.patches, "classes": args.classes,
                         "ground_truth": args.ground_truth, "checkpoint": args.checkpoint})
    print(reporting.format_table(["metric", "value"], rows))
    return 0


def _cmd_probe_report(args) -> int:
    import csv as csv_mod

    from . import evalsuite, reporting
    from .errors import FormatError

    records = []
    with open(args.records, newline="", encoding="utf-8") as fh:
        reader = csv_mod.DictReader(fh)
        expected = ["model_name", "predictor_score", "alignment_score"]
        if reader.fieldnames != expected:
            raise FormatError(f"{args.records}: expected header {','.join(expected)}")
        for row in reader:
            records.append(evalsuite.ProbeRecord(
                model_name=row["model_name"],
                predictor_score=float(row["predictor_score"]),
                alignment_score=float(row["alignment_score"]),
            ))
    report = evalsuite.probing_report(records)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = ["model_name", "predictor_score", "alignment_score", "fitted", "residual"]
    rows = [[rec.model_name, rec.predictor_score, rec.alignment_score,
             report.fitted(rec.predictor_score),
             rec.alignment_score - report.fitted(rec.predictor_score)]
            for rec in report.records]
    reporting.write_csv(out_dir / "report.csv", header, rows)
    summary_rows = [["pearson_r", report.r], ["slope", report.slope],
                    ["intercept", report.intercept]]
    reporting.write_csv(out_dir / "summary.csv", ["metric", "value"], summary_rows)
    reporting.plot_probe_scatter(report, out_dir / "plots" / "probe.svg")
    _write_run_manifest(out_dir, "probe-report", {"records": args.records})
    print(reporting.format_table(["metric", "value"], summary_rows))
    print(reporting.format_table(header, rows))
    return 0


_HANDLERS = {
    "inspect": _cmd_inspect,
    "train": _cmd_train,
    "eval-retrieval": _cmd_eval_retrieval,
    "eval-classify": _cmd_eval_classify,
    "eval-knn": _cmd_eval_knn,
    "eval-winoground": _cmd_eval_winoground,
    "eval-mmvp": _cmd_eval_mmvp,
    "eval-segment": _cmd_eval_segment,
    "probe-report": _cmd_probe_report,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    _pin_blas_single_threaded()
    threads = _scan_threads(argv)

    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad flags; that is a usage problem, not an
        # internal error
        return 1 if exc.code not in (0, None) else 0

    from . import linalg
    from .errors import SailAlignError

    if getattr(args, "threads", None):
        threads = args.threads
    if threads:
        linalg.set_worker_count(threads)

    try:
        return _HANDLERS[args.command](args)
    except (SailAlignError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
