"""Report rendering: delimited output, text tables, and SVG figures.

Figures are written through the Agg backend with a fixed hashsalt and no
date metadata, so rerunning a report produces byte-identical SVG files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evalsuite import PairCosineSummary, ProbingReport, RetrievalReport, WinogroundReport

_SVG_SALT = "sail-align"


def write_csv(path: str | Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cell(v) -> str:
    if isinstance(v, float):
        return format(v, ".10g")
    return str(v)


def format_table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Plain aligned text table for stdout."""
    cells = [[_cell(v) for v in row] for row in rows]
    widths = [len(h) for h in header]
    for row in cells:
        for i, c in enumerate(row):
            widths[i] = max(widths[i], len(c))
    def line(values):
        return "  ".join(v.ljust(w) for v, w in zip(values, widths)).rstrip()
    out = [line(header), line(["-" * w for w in widths])]
    out.extend(line(row) for row in cells)
    return "\n".join(out)


def _new_figure(width: float = 6.0, height: float = 4.0):
    plt.rcParams["svg.hashsalt"] = _SVG_SALT
    return plt.subplots(figsize=(width, height))


def _save(fig, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_recall_bars(report: RetrievalReport, path: str | Path) -> None:
    fig, ax = _new_figure()
    ks = sorted(report.i2t_recall_at)
    x = range(len(ks))
    width = 0.35
    ax.bar([i - width / 2 for i in x], [report.i2t_recall_at[k] for k in ks],
           width, label="image-to-text")
    ax.bar([i + width / 2 for i in x], [report.t2i_recall_at[k] for k in ks],
           width, label="text-to-image")
    ax.set_xticks(list(x), [f"R@{k}" for k in ks])
    ax.set_ylim(0, 1)
    ax.set_ylabel("recall")
    ax.set_title(f"retrieval over {report.n_queries} queries")
    ax.legend()
    _save(fig, path)


def plot_score_bars(scores: dict[str, float], title: str, path: str | Path,
                    ylabel: str = "score") -> None:
    fig, ax = _new_figure()
    names = list(scores)
    ax.bar(range(len(names)), [scores[n] for n in names])
    ax.set_xticks(range(len(names)), names, rotation=30, ha="right")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    _save(fig, path)


def plot_cosine_histogram(summary: PairCosineSummary, path: str | Path,
                          title: str = "pairwise cosine similarity") -> None:
    fig, ax = _new_figure()
    centers = (summary.bin_edges[:-1] + summary.bin_edges[1:]) / 2.0
    ax.bar(centers, summary.histogram, width=summary.bin_edges[1] - summary.bin_edges[0],
           edgecolor="black", linewidth=0.5)
    ax.set_xlabel("cosine similarity")
    ax.set_ylabel("pairs")
    ax.set_title(title)
    _save(fig, path)


def plot_probe_scatter(report: ProbingReport, path: str | Path,
                       xlabel: str = "predictor score",
                       ylabel: str = "alignment score") -> None:
    fig, ax = _new_figure()
    xs = [rec.predictor_score for rec in report.records]
    ys = [rec.alignment_score for rec in report.records]
    ax.scatter(xs, ys)
    for rec in report.records:
        ax.annotate(rec.model_name, (rec.predictor_score, rec.alignment_score),
                    fontsize=8, xytext=(3, 3), textcoords="offset points")
    lo, hi = min(xs), max(xs)
    ax.plot([lo, hi], [report.fitted(lo), report.fitted(hi)],
            linestyle="--", label=f"fit (r={report.r:.3f})")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    _save(fig, path)


def plot_winoground_bars(report: WinogroundReport, path: str | Path) -> None:
    plot_score_bars(
        {"text": report.text_score, "image": report.image_score, "group": report.group_score},
        title=f"quad ordering scores over {report.n_examples} examples",
        path=path,
        ylabel="percent",
    )
