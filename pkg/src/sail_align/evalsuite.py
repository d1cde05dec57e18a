"""Zero-shot and probing metrics.

Conventions shared by every operation: similarities are cosine, rankings
break ties in favor of the lower index, and strict inequalities are
required where the metric is defined through an ordering (a tie never
counts as correct). All reductions run in float64.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .embed_store import LabeledDataset
from .errors import FormatError, ShapeError, ValidationError
from .linalg import cosine_matrix, l2_normalize

KNN_TAU = 0.07
KNN_DEFAULT_K = 20
IGNORE_LABEL = 255
HISTOGRAM_BINS = 20


# ---------------------------------------------------------------- retrieval

@dataclass(frozen=True)
class RetrievalReport:
    i2t_recall_at: dict[int, float]
    t2i_recall_at: dict[int, float]
    n_queries: int

    def average_recall_at(self, k: int) -> float:
        return 0.5 * (self.i2t_recall_at[k] + self.t2i_recall_at[k])


def _as_ground_truth(ground_truth, n_queries: int) -> list[np.ndarray]:
    if isinstance(ground_truth, Mapping):
        items = [ground_truth[i] for i in range(n_queries)]
    else:
        items = list(ground_truth)
    if len(items) != n_queries:
        raise ValidationError(f"ground truth covers {len(items)} of {n_queries} queries")
    out = []
    for i, entry in enumerate(items):
        idx = np.atleast_1d(np.asarray(entry, dtype=np.int64))
        if idx.size == 0:
            raise ValidationError(f"query {i} has no ground-truth index")
        out.append(idx)
    return out


def recall_at_k(
    queries: np.ndarray,
    gallery: np.ndarray,
    ground_truth,
    ks: Sequence[int],
) -> dict[int, float]:
    """Fraction of queries whose ground truth ranks within the top K.

    ground_truth maps each query row to one or more gallery indices
    (a list-of-lists or an int-keyed mapping).
    """
    sims = cosine_matrix(queries, gallery).values
    n_queries, n_gallery = sims.shape
    for k in ks:
        if k > n_gallery:
            raise ValidationError(f"K={k} exceeds gallery size {n_gallery}")
    truth = _as_ground_truth(ground_truth, n_queries)
    ranking = np.argsort(-sims, axis=1, kind="stable")  # ties -> lower index first
    max_k = max(ks)
    hits = {k: 0 for k in ks}
    for i in range(n_queries):
        top = ranking[i, :max_k]
        positions = np.isin(top, truth[i]).nonzero()[0]
        if positions.size:
            first = positions[0]
            for k in ks:
                if first < k:
                    hits[k] += 1
    return {k: hits[k] / n_queries for k in ks}


def retrieval_report(
    image_embeddings: np.ndarray,
    text_embeddings: np.ndarray,
    ks: Sequence[int],
    i2t_ground_truth=None,
    t2i_ground_truth=None,
) -> RetrievalReport:
    """Both retrieval directions; positional pairing when no ground truth given."""
    n = image_embeddings.shape[0]
    if i2t_ground_truth is None:
        i2t_ground_truth = [[i] for i in range(n)]
    if t2i_ground_truth is None:
        t2i_ground_truth = [[i] for i in range(text_embeddings.shape[0])]
    i2t = recall_at_k(image_embeddings, text_embeddings, i2t_ground_truth, ks)
    t2i = recall_at_k(text_embeddings, image_embeddings, t2i_ground_truth, ks)
    return RetrievalReport(i2t_recall_at=i2t, t2i_recall_at=t2i, n_queries=n)


# ----------------------------------------------------------- classification

class PrototypeResult(NamedTuple):
    prototypes: np.ndarray
    degenerate_classes: list[int]


def build_prototypes(prompt_embeddings: Sequence[np.ndarray]) -> PrototypeResult:
    """Per class: normalize each prompt, average, renormalize.

    A class whose prompts cancel out (zero mean) keeps the zero vector and
    is reported in degenerate_classes.
    """
    rows = []
    degenerate = []
    for c, prompts in enumerate(prompt_embeddings):
        prompts = np.asarray(prompts, dtype=np.float64)
        if prompts.ndim != 2 or prompts.shape[0] == 0:
            raise ValidationError(f"class {c} has no prompt embeddings")
        mean = l2_normalize(prompts).values.mean(axis=0, keepdims=True)
        normed = l2_normalize(mean)
        if normed.zero_rows:
            degenerate.append(c)
        rows.append(normed.values[0])
    return PrototypeResult(np.stack(rows), degenerate)


def zeroshot_classify(
    images: np.ndarray, class_prototypes: np.ndarray, labels: Sequence[int]
) -> float:
    """Top-1 accuracy of argmax-cosine prediction against class prototypes."""
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = class_prototypes.shape[0]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValidationError(f"labels must lie in [0, {n_classes})")
    sims = cosine_matrix(images, class_prototypes, col_tag="class").values
    predictions = sims.argmax(axis=1)  # first max = lowest class index
    return float((predictions == labels).mean())


def knn_classify(train: LabeledDataset, test: LabeledDataset, k: int = KNN_DEFAULT_K) -> float:
    """Distance-weighted k-NN vote in cosine space, weight exp(sim / tau)."""
    if k < 1 or k > train.embeddings.n_rows:
        raise ValidationError(f"k must lie in [1, {train.embeddings.n_rows}], got {k}")
    if train.embeddings.dim != test.embeddings.dim:
        raise ShapeError(
            f"train dim {train.embeddings.dim} != test dim {test.embeddings.dim}"
        )
    sims = cosine_matrix(test.embeddings.data, train.embeddings.data).values
    neighbor_order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    n_classes = max(train.n_classes, test.n_classes)
    correct = 0
    for i in range(sims.shape[0]):
        neighbors = neighbor_order[i]
        weights = np.exp(sims[i, neighbors] / KNN_TAU)
        votes = np.zeros(n_classes)
        np.add.at(votes, train.labels[neighbors], weights)
        if votes.argmax() == test.labels[i]:
            correct += 1
    return correct / sims.shape[0]


# ------------------------------------------------------- quad-based metrics

@dataclass(frozen=True)
class Quad:
    """2x2 similarity grid for one example: s(T_a, I_b) for a, b in {0, 1}."""

    s_t0i0: float
    s_t0i1: float
    s_t1i0: float
    s_t1i1: float
    pattern: str | None = None
    example_id: str | None = None

    def text_correct(self) -> bool:
        return self.s_t0i0 > self.s_t1i0 and self.s_t1i1 > self.s_t0i1

    def image_correct(self) -> bool:
        return self.s_t0i0 > self.s_t0i1 and self.s_t1i1 > self.s_t1i0

    def group_correct(self) -> bool:
        return self.text_correct() and self.image_correct()


@dataclass(frozen=True)
class WinogroundReport:
    text_score: float
    image_score: float
    group_score: float
    n_examples: int


def winoground_score(quads: Sequence[Quad]) -> WinogroundReport:
    """Strict-ordering text/image/group scores as percentages."""
    if not quads:
        raise ValidationError("need at least one quad")
    text = np.mean([q.text_correct() for q in quads])
    image = np.mean([q.image_correct() for q in quads])
    group = np.mean([q.group_correct() for q in quads])
    return WinogroundReport(
        text_score=100.0 * float(text),
        image_score=100.0 * float(image),
        group_score=100.0 * float(group),
        n_examples=len(quads),
    )


def mmvp_pair_score(quads: Sequence[Quad]) -> float:
    """Image-matching score over quads; pattern tags average pattern-wise first."""
    if not quads:
        raise ValidationError("need at least one quad")
    if any(q.pattern for q in quads):
        by_pattern: dict[str, list[bool]] = {}
        for q in quads:
            by_pattern.setdefault(q.pattern or "", []).append(q.image_correct())
        per_pattern = [np.mean(v) for _, v in sorted(by_pattern.items())]
        return 100.0 * float(np.mean(per_pattern))
    return 100.0 * float(np.mean([q.image_correct() for q in quads]))


def load_quads_csv(path: str | Path) -> list[Quad]:
    """Quads from CSV with header id,s_t0i0,s_t0i1,s_t1i0,s_t1i1[,pattern]."""
    required = ["id", "s_t0i0", "s_t0i1", "s_t1i0", "s_t1i1"]
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or reader.fieldnames[: len(required)] != required:
            raise FormatError(
                f"{path}: expected header {','.join(required)}[,pattern], "
                f"got {reader.fieldnames}"
            )
        quads = []
        for row in reader:
            quads.append(
                Quad(
                    s_t0i0=float(row["s_t0i0"]),
                    s_t0i1=float(row["s_t0i1"]),
                    s_t1i0=float(row["s_t1i0"]),
                    s_t1i1=float(row["s_t1i1"]),
                    pattern=row.get("pattern") or None,
                    example_id=row["id"],
                )
            )
    if not quads:
        raise FormatError(f"{path}: no quad rows")
    return quads


# ----------------------------------------------------- pair cosine analysis

@dataclass(frozen=True)
class PairCosineSummary:
    cosines: np.ndarray
    mean: float
    min: float
    max: float
    deciles: dict[int, float]  # percentile -> value, p in 10..90
    histogram: np.ndarray = field(repr=False)  # 20 bins over [-1, 1]
    bin_edges: np.ndarray = field(repr=False)


def pair_cosine_analysis(a: np.ndarray, b: np.ndarray) -> PairCosineSummary:
    """Cosine of each row pair (a_i, b_i) plus distribution summary."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"paired inputs must share shape, got {a.shape} vs {b.shape}")
    an = l2_normalize(a).values
    bn = l2_normalize(b).values
    cosines = np.einsum("ij,ij->i", an, bn)
    deciles = {p: float(np.percentile(cosines, p)) for p in range(10, 100, 10)}
    edges = np.linspace(-1.0, 1.0, HISTOGRAM_BINS + 1)
    counts, _ = np.histogram(np.clip(cosines, -1.0, 1.0), bins=edges)
    return PairCosineSummary(
        cosines=cosines,
        mean=float(cosines.mean()),
        min=float(cosines.min()),
        max=float(cosines.max()),
        deciles=deciles,
        histogram=counts,
        bin_edges=edges,
    )


# -------------------------------------------------------------- segmentation

@dataclass(frozen=True)
class SegmentationInput:
    patch_embeddings: np.ndarray  # (h * w, d), row-major over the grid
    class_text_embeddings: np.ndarray  # (C, d)
    ground_truth: np.ndarray  # (h, w) class indices, 255 = ignore
    h: int
    w: int

    def __post_init__(self):
        if self.h < 1 or self.w < 1:
            raise ValidationError("grid dims must be >= 1")
        if self.class_text_embeddings.shape[0] < 2:
            raise ValidationError("need at least 2 classes")
        if self.patch_embeddings.shape[0] != self.h * self.w:
            raise ShapeError(
                f"expected {self.h * self.w} patches, got {self.patch_embeddings.shape[0]}"
            )
        if self.ground_truth.shape != (self.h, self.w):
            raise ShapeError(
                f"ground truth shape {self.ground_truth.shape} != ({self.h}, {self.w})"
            )


def segment(inp: SegmentationInput) -> tuple[np.ndarray, float]:
    """Argmax-cosine patch labeling and its mean IoU against the ground truth.

    IoU is computed per class present in the (non-ignored) ground truth;
    patches labeled 255 are excluded from intersection and union alike.
    """
    gt = np.asarray(inp.ground_truth, dtype=np.int64)
    valid = gt != IGNORE_LABEL
    if not valid.any():
        raise ValidationError("no non-ignored ground-truth patch")
    sims = cosine_matrix(inp.patch_embeddings, inp.class_text_embeddings,
                         row_tag="patch", col_tag="class").values
    mask = sims.argmax(axis=1).reshape(inp.h, inp.w)
    ious = per_class_iou(mask, gt)
    return mask, float(np.mean(list(ious.values())))


def per_class_iou(mask: np.ndarray, ground_truth: np.ndarray) -> dict[int, float]:
    """IoU per class present in the non-ignored ground truth."""
    gt = np.asarray(ground_truth, dtype=np.int64)
    valid = gt != IGNORE_LABEL
    ious: dict[int, float] = {}
    for c in np.unique(gt[valid]):
        pred_c = (mask == c) & valid
        gt_c = (gt == c) & valid
        union = (pred_c | gt_c).sum()
        ious[int(c)] = float((pred_c & gt_c).sum() / union)
    return ious


# -------------------------------------------------------------- correlation

def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation, float64."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError("pearson needs two equal-length 1-D sequences")
    if x.size < 2:
        raise ValidationError("pearson needs at least 2 points")
    dx = x - x.mean()
    dy = y - y.mean()
    vx = (dx * dx).sum()
    vy = (dy * dy).sum()
    if vx == 0.0 or vy == 0.0:
        raise ValidationError("correlation undefined: zero variance")
    return float((dx * dy).sum() / np.sqrt(vx * vy))


@dataclass(frozen=True)
class ProbeRecord:
    model_name: str
    predictor_score: float  # kNN top-1 or an external language-benchmark average
    alignment_score: float  # average retrieval R@10

    def __post_init__(self):
        if not (np.isfinite(self.predictor_score) and np.isfinite(self.alignment_score)):
            raise ValidationError(f"non-finite scores for {self.model_name!r}")


@dataclass(frozen=True)
class ProbingReport:
    records: tuple[ProbeRecord, ...]
    r: float
    slope: float
    intercept: float

    def fitted(self, predictor_score: float) -> float:
        return self.slope * predictor_score + self.intercept


def probing_report(records: Sequence[ProbeRecord]) -> ProbingReport:
    """Least-squares line and correlation of alignment vs predictor scores."""
    if len(records) < 2:
        raise ValidationError("need at least 2 probe records")
    x = np.asarray([rec.predictor_score for rec in records], dtype=np.float64)
    y = np.asarray([rec.alignment_score for rec in records], dtype=np.float64)
    dx = x - x.mean()
    var = (dx * dx).sum()
    if var == 0.0:
        raise ValidationError("degenerate predictor scores: zero variance")
    slope = float((dx * (y - y.mean())).sum() / var)
    intercept = float(y.mean() - slope * x.mean())
    return ProbingReport(
        records=tuple(records), r=pearson(x, y), slope=slope, intercept=intercept
    )
