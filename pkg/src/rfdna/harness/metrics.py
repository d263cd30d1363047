"""Per-SNR metrics records and deterministic CSV/plot reports."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


@dataclass
class MetricsRecord:
    snr_db: float
    confusion: np.ndarray
    # op name -> (min, max) count over single decisions
    ops_per_decision: dict[str, tuple[int, int]] = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, snr_db: float, y_true, y_pred, n_classes: int,
                         ops: Sequence[Counter] = ()) -> "MetricsRecord":
        cm = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(cm, (np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)), 1)
        keys = sorted({k for c in ops for k in c})
        per = {k: (min(c[k] for c in ops), max(c[k] for c in ops)) for k in keys}
        return cls(float(snr_db), cm, per)

    @property
    def n_decisions(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion)) / self.n_decisions

    @property
    def per_class_accuracy(self) -> np.ndarray:
        rows = self.confusion.sum(axis=1)
        return np.diag(self.confusion) / np.maximum(rows, 1)

    def to_dict(self) -> dict:
        return {"snr_db": self.snr_db, "confusion": self.confusion.tolist(),
                "ops_per_decision": {k: list(v) for k, v in self.ops_per_decision.items()}}

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricsRecord":
        return cls(float(d["snr_db"]), np.asarray(d["confusion"], dtype=np.int64),
                   {k: tuple(v) for k, v in d.get("ops_per_decision", {}).items()})


def _snr_tag(snr: float) -> str:
    return f"{snr:g}".replace("-", "m").replace(".", "p")


def write_accuracy_csv(path, records: Sequence[MetricsRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        n = len(records[0].confusion) if records else 0
        w.writerow(["snr_db", "accuracy", "n_decisions"] + [f"class_{c}_accuracy" for c in range(n)])
        for r in sorted(records, key=lambda r: r.snr_db):
            w.writerow([f"{r.snr_db:g}", f"{r.accuracy:.6f}", r.n_decisions]
                       + [f"{a:.6f}" for a in r.per_class_accuracy])


def write_confusion_csv(path, record: MetricsRecord) -> None:
    n = len(record.confusion)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred"] + [str(c) for c in range(n)])
        for i, row in enumerate(record.confusion):
            w.writerow([str(i)] + [str(int(v)) for v in row])


def report(metrics: Mapping[str, Sequence[MetricsRecord]], out_dir, plots: bool = True) -> list[Path]:
    """Write per-pipeline accuracy CSVs, per-SNR confusion CSVs, a summary and plots.

    File names depend only on pipeline names and SNRs, so reruns overwrite
    the same files with the same bytes.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in sorted(metrics):
        records = metrics[name]
        p = out / f"accuracy_{name}.csv"
        write_accuracy_csv(p, records)
        written.append(p)
        for r in records:
            p = out / f"confusion_{name}_{_snr_tag(r.snr_db)}dB.csv"
            write_confusion_csv(p, r)
            written.append(p)
    summary = out / "summary.csv"
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pipeline", "snr_db", "metric", "value"])
        for name in sorted(metrics):
            for r in sorted(metrics[name], key=lambda r: r.snr_db):
                w.writerow([name, f"{r.snr_db:g}", "accuracy", f"{r.accuracy:.6f}"])
                for op, (lo, hi) in sorted(r.ops_per_decision.items()):
                    w.writerow([name, f"{r.snr_db:g}", f"{op}_per_decision", lo if lo == hi else f"{lo}..{hi}"])
    written.append(summary)
    if plots and metrics:
        written += _plots(metrics, out)
    return written


def _plots(metrics, out: Path) -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    files = []
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in sorted(metrics):
        rs = sorted(metrics[name], key=lambda r: r.snr_db)
        ax.plot([r.snr_db for r in rs], [100 * r.accuracy for r in rs], marker="o", label=name)
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("correct classification (%)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    p = out / "accuracy_vs_snr.png"
    fig.savefig(p, dpi=100)
    plt.close(fig)
    files.append(p)
    for name in sorted(metrics):
        r = max(metrics[name], key=lambda r: r.snr_db)
        fig, ax = plt.subplots(figsize=(4, 4))
        cm = r.confusion / np.maximum(r.confusion.sum(axis=1, keepdims=True), 1)
        ax.imshow(cm, vmin=0, vmax=1, cmap="Blues")
        for (i, j), v in np.ndenumerate(cm):
            ax.text(j, i, f"{100 * v:.0f}", ha="center", va="center", fontsize=8)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        ax.set_title(f"{name} @ {r.snr_db:g} dB")
        fig.tight_layout()
        p = out / f"confusion_{name}_{_snr_tag(r.snr_db)}dB.png"
        fig.savefig(p, dpi=100)
        plt.close(fig)
        files.append(p)
    return files
