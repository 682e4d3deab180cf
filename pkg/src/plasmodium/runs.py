"""Run-directory layout and the cross-run comparison report.

Every training/evaluation command lands its artifacts under
``runs/<run-id>/``: manifest.json, history CSVs, report.json/report.txt,
figures, and optionally the exported bundle. Manifests carry no wall-clock
fields, so rerunning a seeded command reproduces its artifacts byte for
byte. The comparison report aggregates stored report values only; nothing
is recomputed.
"""

from __future__ import annotations

import json
from pathlib import Path

from . import figures
from .metrics import EvaluationReport, render_report, roc_points, save_roc_csv

# Ordering of the published comparison grid: the SVM baseline, the two
# deep CNNs, then each backbone under each training mode.
COMPARISON_ORDER = [
    "svm",
    "cnn-a",
    "cnn-b",
    "vgg19-frozen",
    "vgg19-incremental",
    "vgg19-full",
    "inceptionv3-frozen",
    "inceptionv3-incremental",
    "inceptionv3-full",
    "xception-frozen",
    "xception-incremental",
    "xception-full",
]

_METHOD = {
    "svm": ("Machine Learning", "SVM", ""),
    "cnn-a": ("Deep Learning", "CNN", "drop-out, weight initialization, and batch normalization"),
    "cnn-b": ("Deep Learning", "CNN", "drop-out, weight initialization, and zero padding"),
}
_MODE = {
    "frozen": "frozen CNN",
    "incremental": "incremental unfreezing and fine-tuning",
    "full": "unfreezing and fine-tuning the whole network",
}
_BACKBONE_TITLES = {"vgg19": "VGG-19", "inceptionv3": "Inception-V3", "xception": "Xception"}


def describe_run_kind(kind: str) -> tuple[str, str, str]:
    """(training method, specific model, training mode) for a run kind."""
    if kind in _METHOD:
        return _METHOD[kind]
    backbone, _, regime = kind.partition("-")
    if backbone in _BACKBONE_TITLES and regime in _MODE:
        return ("Transfer Learning", _BACKBONE_TITLES[backbone], _MODE[regime])
    return ("", kind, "")


def run_dir(root: Path | str, run_id: str) -> Path:
    path = Path(root) / run_id
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_manifest(directory: Path, manifest: dict) -> Path:
    path = Path(directory) / "manifest.json"
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def read_manifest(directory: Path) -> dict:
    with open(Path(directory) / "manifest.json") as f:
        return json.load(f)


def metrics_summary(report: EvaluationReport) -> dict:
    out = {
        "accuracy": report.accuracy,
        "precision": report.weighted_avg.precision,
        "recall": report.weighted_avg.recall,
        "f1": report.weighted_avg.f1,
        "mcc": report.mcc,
        "fpr": report.fpr,
        "fnr": report.fnr,
    }
    if report.auc_roc is not None:
        out["auc_roc"] = report.auc_roc
    return out


def write_evaluation_artifacts(
    directory: Path | str,
    report: EvaluationReport,
    truths=None,
    scores=None,
) -> None:
    """report.json + report.txt + confusion heatmap, and the ROC CSV/figure
    when per-sample scores are available."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    report.save(directory / "report.json")
    (directory / "report.txt").write_text(render_report(report))
    figures.confusion_figure(report, directory / "confusion_matrix.png")
    if scores is not None and truths is not None and report.auc_roc is not None:
        points = roc_points(truths, scores)
        save_roc_csv(points, directory / "roc_curve.csv")
        figures.roc_figure(points, report.auc_roc, directory / "roc_curve.png")


def collect_runs(runs_root: Path | str) -> list[dict]:
    """All run manifests under the root, one level deep."""
    found = []
    root = Path(runs_root)
    if not root.is_dir():
        return found
    for child in sorted(root.iterdir()):
        manifest = child / "manifest.json"
        if manifest.is_file():
            with open(manifest) as f:
                found.append(json.load(f))
    return found


def comparison_rows(manifests: list[dict]) -> list[dict]:
    """One row per run, ordered like the published grid; runs whose kind is
    not part of the grid sort after it."""
    def sort_key(m):
        kind = m.get("kind", "")
        try:
            return (COMPARISON_ORDER.index(kind), m.get("run_id", ""))
        except ValueError:
            return (len(COMPARISON_ORDER), m.get("run_id", ""))

    rows = []
    for m in sorted(manifests, key=sort_key):
        metrics = m.get("metrics") or {}
        if not metrics:
            continue
        method, model, mode = describe_run_kind(m.get("kind", ""))
        rows.append(
            {
                "run_id": m.get("run_id", ""),
                "kind": m.get("kind", ""),
                "method": method,
                "model": model if not mode else f"{model} ({m.get('kind')})",
                "mode": mode,
                "accuracy": metrics.get("accuracy"),
                "precision": metrics.get("precision"),
                "recall": metrics.get("recall"),
                "f1": metrics.get("f1"),
            }
        )
    return rows


def write_comparison(rows: list[dict], out_dir: Path | str) -> Path:
    """comparison.csv + fixed-width comparison.txt + grouped bar figure."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "comparison.csv"
    with open(csv_path, "w") as f:
        f.write("run_id,method,model,mode,accuracy,precision,recall,f1\n")
        for r in rows:
            f.write(
                f"{r['run_id']},{r['method']},{r['model'].replace(',', ';')},"
                f"{r['mode'].replace(',', ';')},{r['accuracy']!r},{r['precision']!r},"
                f"{r['recall']!r},{r['f1']!r}\n"
            )

    widths = (18, 30, 46)
    lines = [
        f"{'Training Method':<{widths[0]}}{'Model':<{widths[1]}}{'Mode':<{widths[2]}}"
        f"{'Accuracy':>9}{'Precision':>10}{'Recall':>8}{'F1':>6}"
    ]
    for r in rows:
        lines.append(
            f"{r['method']:<{widths[0]}}{r['model']:<{widths[1]}}{r['mode']:<{widths[2]}}"
            f"{r['accuracy']:>9.2f}{r['precision']:>10.2f}{r['recall']:>8.2f}{r['f1']:>6.2f}"
        )
    (out_dir / "comparison.txt").write_text("\n".join(lines) + "\n")
    if rows:
        figures.comparison_figure(rows, out_dir / "comparison.png")
    return csv_path
