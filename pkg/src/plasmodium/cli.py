"""Command-line surface: ingest, split, grid-search, train, evaluate,
export, compare and reproduce.

Artifacts land under ``runs/<run-id>/`` (manifest.json, split.json,
history CSVs, report.json/report.txt, figures, bundle/). Seeded commands
write byte-identical artifacts across reruns on the same machine, so run
manifests carry no timestamps.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import runs as runlib
from .dataset import (
    NIH_CITATION_URL,
    CorpusLayoutError,
    DatasetSplit,
    SplitScheme,
    balanced_subset,
    ingest_corpus,
    make_split,
    read_manifest,
    write_manifest,
)
from .metrics import evaluate as evaluate_metrics
from .metrics import render_report
from .preprocess import (
    AugmentConfig,
    CNN_B_PROFILE,
    PreprocessProfile,
    SMALL_IMAGE_PROFILE,
    SVM_FEATURE_PROFILE,
)

DATA_DIR_ENV = "PLASMODIUM_DATA_DIR"

BEST_SVM_C = 1.0
BEST_SVM_GAMMA = 0.01


class DataMissingError(RuntimeError):
    pass


def _resolve_data(path_arg: str | None) -> Path:
    path = path_arg or os.environ.get(DATA_DIR_ENV)
    if not path or not Path(path).is_dir():
        raise DataMissingError(
            f"no corpus directory (pass --data or set {DATA_DIR_ENV}); the NIH cell-image "
            f"archive is available at {NIH_CITATION_URL} (or generate a synthetic stand-in "
            f"with `plasmodium synth`)"
        )
    return Path(path)


def _load_corpus(args) -> list:
    data_root = _resolve_data(getattr(args, "data", None))
    corpus, summary = ingest_corpus(data_root, limit_per_class=getattr(args, "limit_per_class", None))
    if not corpus:
        raise DataMissingError(f"no decodable PNG images under {data_root}; see {NIH_CITATION_URL}")
    if getattr(args, "subset", None):
        corpus = balanced_subset(corpus, args.subset, seed=args.seed)
    return corpus


def _split_for(args, corpus, scheme: SplitScheme) -> DatasetSplit:
    if getattr(args, "split", None):
        return read_manifest(args.split)
    return make_split(corpus, scheme, seed=args.seed)


def _augment_config() -> AugmentConfig:
    return AugmentConfig()


def _train_profile(base: PreprocessProfile) -> PreprocessProfile:
    return PreprocessProfile(target_size=base.target_size, normalize=True, augment=_augment_config())


def _split_summary(split: DatasetSplit, manifest_path: Path) -> dict:
    from .bundle import file_sha256

    return {
        "scheme": split.scheme.value,
        "seed": split.seed,
        "sizes": dict(zip(("train", "validation", "test"), split.sizes())),
        "per_class": split.per_class_counts(),
        "manifest_sha256": file_sha256(manifest_path),
    }


def _finish_run(
    run_dir: Path,
    manifest: dict,
    report,
    truths=None,
    scores=None,
) -> None:
    manifest["metrics"] = runlib.metrics_summary(report)
    runlib.write_evaluation_artifacts(run_dir, report, truths=truths, scores=scores)
    runlib.write_manifest(run_dir, manifest)
    print(render_report(report))
    print(f"artifacts written to {run_dir}")


# ---------------------------------------------------------------- commands


def cmd_ingest(args) -> int:
    data_root = _resolve_data(args.data)
    corpus, summary = ingest_corpus(data_root, limit_per_class=args.limit_per_class)
    print(f"corpus root: {data_root}")
    for name, count in summary.per_class.items():
        print(f"  {name}: {count}")
    print(f"  total: {summary.total}")
    print(f"  skipped (undecodable): {len(summary.skipped)}")
    for path, reason in summary.skipped[:10]:
        print(f"    {path}: {reason}")
    return 0


def cmd_split(args) -> int:
    corpus = _load_corpus(args)
    split = make_split(corpus, SplitScheme.parse(args.scheme), seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_manifest(split, out)
    sizes = split.sizes()
    print(f"split {args.scheme} seed={args.seed}: train={sizes[0]} val={sizes[1]} test={sizes[2]}")
    print(f"manifest written to {out}")
    return 0


def cmd_grid_search(args) -> int:
    from .svm import DEFAULT_C_GRID, DEFAULT_GAMMA_GRID, featurize_corpus, grid_search

    corpus = _load_corpus(args)
    split = _split_for(args, corpus, SplitScheme.SVM_SCHEME)
    x, y = featurize_corpus(split.train)
    c_grid = [float(v) for v in args.c_grid.split(",")] if args.c_grid else list(DEFAULT_C_GRID)
    g_grid = [float(v) for v in args.gamma_grid.split(",")] if args.gamma_grid else list(DEFAULT_GAMMA_GRID)
    result = grid_search(x, y, c_grid, g_grid, folds=args.folds, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    result.save_csv(out)
    for c, gamma, acc in result.scores:
        print(f"C={c:<8g} gamma={gamma:<8g} cv_accuracy={acc:.4f}")
    print(f"best: C={result.best.C:g} gamma={result.best.gamma:g}")
    print(f"score table written to {out}")
    return 0


def _run_svm(args) -> int:
    from .svm import SvmHyperParams, featurize_corpus, predict_svm, train_svm

    corpus = _load_corpus(args)
    split = _split_for(args, corpus, SplitScheme.SVM_SCHEME)
    run_dir = runlib.run_dir(args.runs_root, args.run_id or f"svm-seed{args.seed}")
    split_path = run_dir / "split.json"
    write_manifest(split, split_path)

    params = SvmHyperParams(C=args.C, gamma=args.gamma)
    x_train, y_train = featurize_corpus(split.train)
    model = train_svm(x_train, y_train, params)
    model.save(run_dir / "svm_model.npz")

    x_test, y_test = featurize_corpus(split.test)
    labels, scores = predict_svm(model, x_test)
    report = evaluate_metrics(y_test, labels, scores=scores)

    manifest = {
        "run_id": run_dir.name,
        "kind": "svm",
        "seed": args.seed,
        "params": {"C": params.C, "gamma": params.gamma},
        "profile": SVM_FEATURE_PROFILE.to_json(),
        "split": _split_summary(split, split_path),
        "model_file": "svm_model.npz",
    }
    _finish_run(run_dir, manifest, report, truths=y_test, scores=scores)
    return 0


def _save_history(run_dir: Path, histories) -> None:
    from . import figures

    if len(histories) == 1:
        histories[0].save_csv(run_dir / "history.csv")
    else:
        for i, history in enumerate(histories, start=1):
            history.save_csv(run_dir / f"history_phase{i}.csv")
    figures.training_curves(histories, run_dir / "training_curves.png")


def _run_cnn(args) -> int:
    from .cnn import graph_for_arch
    from .train import TrainConfig, predict_images, train_model

    corpus = _load_corpus(args)
    split = _split_for(args, corpus, SplitScheme.CNN_SCHEME)
    graph = graph_for_arch(args.arch)
    base = CNN_B_PROFILE if args.arch == "b" else SMALL_IMAGE_PROFILE
    profile = _train_profile(base)
    config = TrainConfig(
        optimizer=args.optimizer,
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
    )

    run_dir = runlib.run_dir(args.runs_root, args.run_id or f"cnn-{args.arch}-seed{args.seed}")
    split_path = run_dir / "split.json"
    write_manifest(split, split_path)

    model, history = train_model(graph, split, profile, config, seed=args.seed, verbose=True)
    model.save(run_dir / "model.keras")
    _save_history(run_dir, [history])

    probs = predict_images(model, split.test, profile)
    truths = [im.label for im in split.test]
    report = evaluate_metrics(truths, probs.argmax(axis=1), scores=probs[:, 1])

    manifest = {
        "run_id": run_dir.name,
        "kind": f"cnn-{args.arch}",
        "seed": args.seed,
        "config": config.to_json(),
        "profile": profile.to_json(),
        "split": _split_summary(split, split_path),
        "model_file": "model.keras",
        "best_epoch": history.best_epoch,
        "stopped_early": history.stopped_early,
    }
    _finish_run(run_dir, manifest, report, truths=truths, scores=probs[:, 1])
    return 0


def _run_transfer(args) -> int:
    from .train import SGD_CONFIG, TrainConfig
    from .transfer import (
        Backbone,
        Regime,
        backbone_checksum,
        build_transfer_model,
        plan_regime,
        run_regime,
    )

    corpus = _load_corpus(args)
    split = _split_for(args, corpus, SplitScheme.TRANSFER_SCHEME)
    backbone = Backbone.parse(args.backbone)
    regime = Regime.parse(args.regime)

    run_dir = runlib.run_dir(args.runs_root, args.run_id or f"{backbone.value}-{regime.value}-seed{args.seed}")
    split_path = run_dir / "split.json"
    write_manifest(split, split_path)

    tmodel = build_transfer_model(backbone, pretrained=args.pretrained, weights_dir=args.weights_dir)
    profile = _train_profile(SMALL_IMAGE_PROFILE)
    base_config = TrainConfig(
        optimizer="sgd",
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        momentum=SGD_CONFIG.momentum,
    )
    spec = plan_regime(regime, tmodel, base_config)
    initial_checksum = backbone_checksum(tmodel)
    result = run_regime(tmodel, spec, split, profile, base_config, seed=args.seed, verbose=True)
    result.model.save(run_dir / "model.keras")
    _save_history(run_dir, result.histories)

    manifest = {
        "run_id": run_dir.name,
        "kind": f"{backbone.value}-{regime.value}",
        "seed": args.seed,
        "pretrained": args.pretrained,
        "config": base_config.to_json(),
        "profile": profile.to_json(),
        "split": _split_summary(split, split_path),
        "model_file": "model.keras",
        "backbone_checksum_initial": initial_checksum,
        "backbone_checksum_final": backbone_checksum(tmodel),
        "phases": [
            {"trainable_params": mr.trainable_params, "frozen_params": mr.frozen_params}
            for mr in result.mask_reports
        ],
    }
    truths = [im.label for im in split.test]
    _finish_run(run_dir, manifest, result.report, truths=truths, scores=result.scores)
    return 0


def _load_run_model(run_dir: Path, manifest: dict):
    import keras

    kind = manifest.get("kind", "")
    if kind == "svm":
        from .svm import SvmModel

        return SvmModel.load(run_dir / manifest.get("model_file", "svm_model.npz"))
    return keras.models.load_model(run_dir / manifest.get("model_file", "model.keras"), compile=False)


def cmd_evaluate(args) -> int:
    run_dir = Path(args.run)
    manifest = runlib.read_manifest(run_dir)
    split = read_manifest(args.split) if args.split else read_manifest(run_dir / "split.json")
    out_dir = Path(args.out) if args.out else run_dir
    model = _load_run_model(run_dir, manifest)

    if manifest.get("kind") == "svm":
        from .svm import featurize_corpus, predict_svm

        x, truths = featurize_corpus(split.test, model.profile)
        labels, scores = predict_svm(model, x)
    else:
        from .train import predict_images

        profile = PreprocessProfile.from_json(manifest["profile"])
        probs = predict_images(model, split.test, profile)
        labels, scores = probs.argmax(axis=1), probs[:, 1]
        truths = [im.label for im in split.test]

    report = evaluate_metrics(truths, labels, scores=scores)
    runlib.write_evaluation_artifacts(out_dir, report, truths=truths, scores=scores)
    print(render_report(report))
    print(f"evaluation artifacts written to {out_dir}")
    return 0


def cmd_export(args) -> int:
    from .bundle import export_model

    run_dir = Path(args.run)
    manifest = runlib.read_manifest(run_dir)
    if manifest.get("kind") == "svm":
        print("the SVM baseline is not exportable to the browser bundle format", file=sys.stderr)
        return 1
    model = _load_run_model(run_dir, manifest)
    profile = PreprocessProfile.from_json(manifest["profile"])
    inference_profile = PreprocessProfile(target_size=profile.target_size, normalize=profile.normalize)

    probe = None
    split_file = run_dir / "split.json"
    if split_file.is_file():
        probe = read_manifest(split_file).test[:32]

    out_dir = Path(args.out) if args.out else run_dir / "bundle"
    bundle = export_model(
        model,
        inference_profile,
        out_dir,
        metadata={
            "model_name": manifest.get("kind", run_dir.name),
            "run_id": manifest.get("run_id", run_dir.name),
            "split_manifest_sha256": (manifest.get("split") or {}).get("manifest_sha256"),
            "metrics": manifest.get("metrics", {}),
        },
        probe=probe,
    )
    print(f"bundle written to {out_dir} (probe drift {bundle.fidelity_max_abs_diff:.2e})")

    if args.catalog:
        catalog_path = Path(args.catalog)
        entries = []
        if catalog_path.is_file():
            entries = json.loads(catalog_path.read_text()).get("models", [])
        entry = {
            "id": manifest.get("kind", run_dir.name),
            "display_name": " ".join(runlib.describe_run_kind(manifest.get("kind", ""))[1:]).strip()
            or run_dir.name,
            "bundle_url": os.path.relpath(out_dir, catalog_path.parent),
            "reported_metrics": {
                k: v
                for k, v in manifest.get("metrics", {}).items()
                if k in ("accuracy", "precision", "recall", "f1")
            },
            "preprocess": inference_profile.to_json(),
        }
        entries = [e for e in entries if e.get("id") != entry["id"]] + [entry]
        catalog_path.parent.mkdir(parents=True, exist_ok=True)
        catalog_path.write_text(json.dumps({"models": entries}, indent=2) + "\n")
        print(f"catalog updated: {catalog_path}")
    return 0


def cmd_report(args) -> int:
    if not args.compare:
        print("nothing to do; pass --compare to aggregate run manifests", file=sys.stderr)
        return 2
    manifests = runlib.collect_runs(args.runs_root)
    rows = runlib.comparison_rows(manifests)
    if not rows:
        print(f"no run manifests with metrics under {args.runs_root}", file=sys.stderr)
        return 1
    out_dir = Path(args.out) if args.out else Path(args.runs_root) / "comparison"
    runlib.write_comparison(rows, out_dir)
    print((out_dir / "comparison.txt").read_text())
    print(f"comparison written to {out_dir}")
    return 0


def cmd_synth(args) -> int:
    from .synthetic import synthesize_corpus

    root = synthesize_corpus(
        args.out, per_class=args.per_class, seed=args.seed, size=args.size, quadrant=args.quadrant
    )
    print(f"synthetic corpus written to {root} ({args.per_class} images per class)")
    print("note: stand-in images for pipeline testing, not NIH data")
    return 0


def cmd_reproduce(args) -> int:
    """Run the published model matrix: the SVM baseline, both deep CNNs and
    the nine backbone/regime combinations, then the comparison report."""
    failures = []
    for seed_offset in range(args.seeds):
        seed = args.seed + seed_offset
        cells = _reproduce_cells(args, seed)
        for label, fn in cells:
            print(f"=== reproduce: {label} (seed {seed}) ===")
            try:
                fn()
            except Exception as exc:  # keep going; summarize at the end
                print(f"cell {label} failed: {exc}", file=sys.stderr)
                failures.append((label, str(exc)))
    report_args = argparse.Namespace(compare=True, runs_root=args.runs_root, out=None)
    cmd_report(report_args)
    if failures:
        print(f"{len(failures)} cell(s) failed:", file=sys.stderr)
        for label, msg in failures:
            print(f"  {label}: {msg}", file=sys.stderr)
        return 1
    return 0


def _reproduce_cells(args, seed: int):
    full = args.full
    subset = None if full else args.subset
    epochs = args.epochs if args.epochs else (50 if full else 15)
    base = dict(
        data=args.data,
        subset=subset,
        seed=seed,
        runs_root=args.runs_root,
        split=None,
        limit_per_class=None,
        run_id=None,
    )

    def ns(**kw):
        merged = dict(base)
        merged.update(kw)
        return argparse.Namespace(**merged)

    cells = [
        (
            "svm",
            lambda: _run_svm(ns(C=BEST_SVM_C, gamma=BEST_SVM_GAMMA, run_id=f"svm-seed{seed}")),
        )
    ]
    for arch in ("a", "b"):
        cells.append(
            (
                f"cnn-{arch}",
                lambda arch=arch: _run_cnn(
                    ns(
                        arch=arch,
                        optimizer="rmsprop",
                        learning_rate=1e-3,
                        batch_size=args.batch_size,
                        epochs=epochs,
                        run_id=f"cnn-{arch}-seed{seed}",
                    )
                ),
            )
        )
    for backbone in ("vgg19", "inceptionv3", "xception"):
        for regime in ("frozen", "incremental", "full"):
            cells.append(
                (
                    f"{backbone}-{regime}",
                    lambda b=backbone, r=regime: _run_transfer(
                        ns(
                            backbone=b,
                            regime=r,
                            pretrained=args.pretrained,
                            weights_dir=args.weights_dir,
                            learning_rate=1e-2,
                            batch_size=args.batch_size,
                            epochs=epochs,
                            run_id=f"{b}-{r}-seed{seed}",
                        )
                    ),
                )
            )
    return cells


# ---------------------------------------------------------------- parser


def _add_data_args(p, subset_default=None):
    p.add_argument("--data", help=f"corpus root (default: ${DATA_DIR_ENV})")
    p.add_argument("--limit-per-class", type=int, default=None, help="keep only the first N images per class")
    p.add_argument("--subset", type=int, default=subset_default, help="balanced subsample size before splitting")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plasmodium",
        description="Train, evaluate and export malaria blood-smear cell classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="scan the corpus and print an ingestion summary")
    p.add_argument("--data")
    p.add_argument("--limit-per-class", type=int, default=None)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("split", help="write a train/validation/test manifest")
    _add_data_args(p)
    p.add_argument("--scheme", required=True, choices=[s.value for s in SplitScheme])
    p.add_argument("--out", default="split.json")
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("grid-search", help="cross-validated SVM hyperparameter grid")
    _add_data_args(p)
    p.add_argument("--split", help="reuse an existing split manifest")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--c-grid", help="comma-separated C values")
    p.add_argument("--gamma-grid", help="comma-separated gamma values")
    p.add_argument("--out", default="grid_search.csv")
    p.set_defaults(fn=cmd_grid_search)

    p = sub.add_parser("train-svm", help="train the RBF-SVM baseline and evaluate on test")
    _add_data_args(p)
    p.add_argument("--split")
    p.add_argument("--C", type=float, default=BEST_SVM_C)
    p.add_argument("--gamma", type=float, default=BEST_SVM_GAMMA)
    p.add_argument("--runs-root", default="runs")
    p.add_argument("--run-id")
    p.set_defaults(fn=_run_svm)

    p = sub.add_parser("train-cnn", help="train one of the two deep CNNs")
    _add_data_args(p)
    p.add_argument("--split")
    p.add_argument("--arch", required=True, choices=["a", "b"])
    p.add_argument("--optimizer", default="rmsprop", choices=["rmsprop", "sgd"])
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--runs-root", default="runs")
    p.add_argument("--run-id")
    p.set_defaults(fn=_run_cnn)

    p = sub.add_parser("train-transfer", help="run a transfer-learning regime")
    _add_data_args(p)
    p.add_argument("--split")
    p.add_argument("--backbone", required=True, choices=["vgg19", "inceptionv3", "xception"])
    p.add_argument("--regime", required=True, choices=["frozen", "incremental", "full"])
    p.add_argument("--pretrained", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--weights-dir", help="pretrained snapshot cache (default: $PLASMODIUM_WEIGHTS_DIR)")
    p.add_argument("--learning-rate", type=float, default=1e-2)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--runs-root", default="runs")
    p.add_argument("--run-id")
    p.set_defaults(fn=_run_transfer)

    p = sub.add_parser("evaluate", help="re-evaluate a stored run on a split's test set")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--split", help="split manifest (default: the run's own)")
    p.add_argument("--out", help="write artifacts here instead of the run directory")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("export", help="export a trained run as a browser bundle")
    p.add_argument("--run", required=True)
    p.add_argument("--out", help="bundle directory (default: <run>/bundle)")
    p.add_argument("--catalog", help="models catalog JSON to update")
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("report", help="aggregate run manifests")
    p.add_argument("--compare", action="store_true")
    p.add_argument("--runs-root", default="runs")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("reproduce", help="run the published model matrix")
    _add_data_args(p, subset_default=2000)
    p.add_argument("--full", action="store_true", help="full corpus and budgets (hours)")
    p.add_argument("--seeds", type=int, default=1, help="repeat with N consecutive seeds")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--pretrained", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--weights-dir")
    p.add_argument("--runs-root", default="runs")
    p.set_defaults(fn=cmd_reproduce)

    p = sub.add_parser("synth", help="generate a synthetic stand-in corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--quadrant", choices=["tl", "tr", "bl", "br"], default=None)
    p.set_defaults(fn=cmd_synth)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (DataMissingError, CorpusLayoutError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"NIH malaria cell-image archive: {NIH_CITATION_URL}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
