"""Detection metrics (precision, recall, AP, mAP), latency benchmarking, the
evaluation-time degradation simulator, and annotation file parsing.

AP uses all-point interpolation: precision is swept over every score cut,
made monotone with a running-max envelope, and integrated over recall.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import imgcore
from .imgcore import KernelSpec

# Sigma implied by a 15x15 gaussian under the usual ksize rule
# sigma = 0.3 * ((ksize - 1) * 0.5 - 1) + 0.8.
DEGRADE_KERNEL_SIZE = 15
DEGRADE_SIGMA = 0.3 * ((DEGRADE_KERNEL_SIZE - 1) * 0.5 - 1) + 0.8
DEGRADE_VISUAL_SCALE = 0.6

MAP_50_95_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


class DegenerateBox(ValueError):
    """Raised for boxes with zero or negative area."""


class ParseError(ValueError):
    """Raised for malformed annotation lines; message carries the line number."""


@dataclass(frozen=True)
class BoundingBox:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise DegenerateBox(
                f"degenerate box ({self.xmin}, {self.ymin}, {self.xmax}, {self.ymax})")

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    score: float
    class_id: int = 0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class Annotation:
    """One parsed annotation line; score is None for ground-truth files."""

    class_id: int
    box: BoundingBox
    score: float | None = None


@dataclass(frozen=True)
class MatchLabels:
    """Per-prediction TP flags (aligned with the input order) plus FN count."""

    tp: tuple[bool, ...]
    fn: int

    @property
    def tp_count(self) -> int:
        return sum(self.tp)

    @property
    def fp_count(self) -> int:
        return len(self.tp) - self.tp_count


@dataclass(frozen=True)
class EvalReport:
    precision: float
    recall: float
    ap_per_threshold: dict[float, float]
    map50: float
    map50_95: float
    tp: int
    fp: int
    fn: int

    def to_text(self) -> str:
        lines = [
            f"precision = {self.precision:.6f}",
            f"recall = {self.recall:.6f}",
            f"map50 = {self.map50:.6f}",
            f"map50_95 = {self.map50_95:.6f}",
            f"tp = {self.tp}",
            f"fp = {self.fp}",
            f"fn = {self.fn}",
        ]
        for thr in sorted(self.ap_per_threshold):
            lines.append(f"ap@{thr:.2f} = {self.ap_per_threshold[thr]:.6f}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "map50": self.map50,
            "map50_95": self.map50_95,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "ap_per_threshold": {f"{t:.2f}": v for t, v in sorted(self.ap_per_threshold.items())},
        }


@dataclass(frozen=True)
class TimingReport:
    """Per-image stage means in milliseconds; latency and fps are derived so
    latency = t_pre + t_inf + t_post and fps = 1000 / latency hold exactly."""

    t_pre: float
    t_inf: float
    t_post: float
    latency: float
    fps: float

    @staticmethod
    def from_stages(t_pre: float, t_inf: float, t_post: float) -> "TimingReport":
        latency = t_pre + t_inf + t_post
        fps = 1000.0 / latency if latency > 0 else float("inf")
        return TimingReport(t_pre=t_pre, t_inf=t_inf, t_post=t_post,
                            latency=latency, fps=fps)

    def to_text(self) -> str:
        return (f"t_pre_ms = {self.t_pre:.6f}\n"
                f"t_inf_ms = {self.t_inf:.6f}\n"
                f"t_post_ms = {self.t_post:.6f}\n"
                f"latency_ms = {self.latency:.6f}\n"
                f"fps = {self.fps:.6f}\n")

    def to_dict(self) -> dict:
        return {"t_pre_ms": self.t_pre, "t_inf_ms": self.t_inf,
                "t_post_ms": self.t_post, "latency_ms": self.latency,
                "fps": self.fps}


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two axis-aligned boxes, in [0, 1]."""
    ix = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    iy = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def _score_order(preds: list[Detection]) -> list[int]:
    """Indices sorted by descending score; ties keep input order."""
    return sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))


def match_detections(preds: list[Detection], gts: list[BoundingBox],
                     iou_thr: float) -> MatchLabels:
    """Greedy one-to-one matching for a single class.

    Predictions are visited in descending score order; each takes the
    unmatched ground truth with the highest IoU >= iou_thr (IoU ties break
    toward the lower ground-truth index). Leftover predictions are FP,
    leftover ground truths FN.
    """
    tp = [False] * len(preds)
    taken = [False] * len(gts)
    for i in _score_order(preds):
        best_iou = 0.0
        best_j = -1
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            v = iou(preds[i].box, gt)
            if v >= iou_thr and v > best_iou:
                best_iou = v
                best_j = j
        if best_j >= 0:
            taken[best_j] = True
            tp[i] = True
    fn = len(gts) - sum(taken)
    return MatchLabels(tp=tuple(tp), fn=fn)


def precision_recall(labels: MatchLabels) -> tuple[float, float]:
    """P = TP/(TP+FP), R = TP/(TP+FN); empty denominators map to 0."""
    tp = labels.tp_count
    fp = labels.fp_count
    p = tp / (tp + fp) if tp + fp > 0 else 0.0
    r = tp / (tp + labels.fn) if tp + labels.fn > 0 else 0.0
    return p, r


def _ap_from_sorted(scores: np.ndarray, tp_flags: np.ndarray, n_gt: int) -> float:
    """All-point interpolated AP from score-descending (score, tp) pairs.

    One PR point per distinct score cut (tied scores enter together, matching
    a literal threshold sweep), precision made monotone with a running-max
    envelope, integrated over recall.
    """
    cum_tp = np.cumsum(tp_flags)
    cum_fp = np.cumsum(1.0 - tp_flags)
    keep = np.ones(len(scores), dtype=bool)
    keep[:-1] = scores[:-1] != scores[1:]
    recall = cum_tp[keep] / n_gt
    precision = cum_tp[keep] / (cum_tp[keep] + cum_fp[keep])
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for r, p in zip(recall, envelope):
        if r > prev_r:
            ap += (r - prev_r) * p
            prev_r = r
    return float(ap)


def average_precision(preds: list[Detection], gts: list[BoundingBox],
                      iou_thr: float) -> float:
    """All-point interpolated AP for a single class."""
    if not gts or not preds:
        return 0.0
    labels = match_detections(preds, gts, iou_thr)
    order = _score_order(preds)
    scores = np.array([preds[i].score for i in order], dtype=np.float64)
    tp_sorted = np.array([labels.tp[i] for i in order], dtype=np.float64)
    return _ap_from_sorted(scores, tp_sorted, len(gts))


def map_at(preds: list[Detection], gts: list[tuple[int, BoundingBox]],
           thresholds: list[float] | tuple[float, ...] = MAP_50_95_THRESHOLDS) -> EvalReport:
    """Class-averaged AP over IoU thresholds plus P/R/counts at IoU 0.50.

    gts are (class_id, box) pairs; predictions are partitioned by class_id.
    map50 always reports the 0.50-threshold case; map50_95 is the mean over
    the given thresholds.
    """
    if not thresholds:
        raise ValueError("thresholds must be non-empty")
    for t in thresholds:
        if not 0.0 < t <= 1.0:
            raise ValueError(f"thresholds must lie in (0, 1], got {t}")
    classes = sorted({c for c, _ in gts} | {p.class_id for p in preds})
    by_class_preds = {c: [p for p in preds if p.class_id == c] for c in classes}
    by_class_gts = {c: [b for cc, b in gts if cc == c] for c in classes}

    def mean_ap(thr: float) -> float:
        if not classes:
            return 0.0
        return float(np.mean([
            average_precision(by_class_preds[c], by_class_gts[c], thr)
            for c in classes
        ]))

    ap_per_threshold = {float(t): mean_ap(float(t)) for t in thresholds}
    map50 = ap_per_threshold.get(0.50, mean_ap(0.50))
    map50_95 = float(np.mean(list(ap_per_threshold.values())))

    tp = fp = fn = 0
    for c in classes:
        labels = match_detections(by_class_preds[c], by_class_gts[c], 0.50)
        tp += labels.tp_count
        fp += labels.fp_count
        fn += labels.fn
    p = tp / (tp + fp) if tp + fp > 0 else 0.0
    r = tp / (tp + fn) if tp + fn > 0 else 0.0
    return EvalReport(precision=p, recall=r, ap_per_threshold=ap_per_threshold,
                      map50=map50, map50_95=map50_95, tp=tp, fp=fp, fn=fn)


def dataset_average_precision(items: list[tuple[list[Detection], list[BoundingBox]]],
                              iou_thr: float) -> float:
    """AP over a dataset: matching stays per image, the PR curve pools all
    predictions by score. `items` holds (preds, gts) per image, one class."""
    scored: list[tuple[float, int, bool]] = []
    n_gt = 0
    for img_idx, (preds, gts) in enumerate(items):
        n_gt += len(gts)
        labels = match_detections(preds, gts, iou_thr)
        for i, p in enumerate(preds):
            scored.append((p.score, img_idx, labels.tp[i]))
    if n_gt == 0 or not scored:
        return 0.0
    scored.sort(key=lambda s: (-s[0], s[1]))
    scores = np.array([s[0] for s in scored], dtype=np.float64)
    tp_sorted = np.array([s[2] for s in scored], dtype=np.float64)
    return _ap_from_sorted(scores, tp_sorted, n_gt)


def map_at_dataset(items: list[tuple[list[Detection], list[tuple[int, BoundingBox]]]],
                   thresholds: list[float] | tuple[float, ...] = MAP_50_95_THRESHOLDS) -> EvalReport:
    """Aggregate EvalReport over images; class-partitioned like map_at."""
    if not thresholds:
        raise ValueError("thresholds must be non-empty")
    classes = sorted({c for _, gts in items for c, _ in gts}
                     | {p.class_id for preds, _ in items for p in preds})

    def class_items(c: int):
        return [([p for p in preds if p.class_id == c],
                 [b for cc, b in gts if cc == c]) for preds, gts in items]

    def mean_ap(thr: float) -> float:
        if not classes:
            return 0.0
        return float(np.mean([dataset_average_precision(class_items(c), thr)
                              for c in classes]))

    ap_per_threshold = {float(t): mean_ap(float(t)) for t in thresholds}
    map50 = ap_per_threshold.get(0.50, mean_ap(0.50))
    map50_95 = float(np.mean(list(ap_per_threshold.values())))

    tp = fp = fn = 0
    for c in classes:
        for preds_c, gts_c in class_items(c):
            labels = match_detections(preds_c, gts_c, 0.50)
            tp += labels.tp_count
            fp += labels.fp_count
            fn += labels.fn
    p = tp / (tp + fp) if tp + fp > 0 else 0.0
    r = tp / (tp + fn) if tp + fn > 0 else 0.0
    return EvalReport(precision=p, recall=r, ap_per_threshold=ap_per_threshold,
                      map50=map50, map50_95=map50_95, tp=tp, fp=fp, fn=fn)


def benchmark(pipeline, inputs: list[tuple[np.ndarray, np.ndarray]],
              warmup: int = 1, repeats: int = 1) -> tuple[TimingReport, list[float]]:
    """Time a staged fusion pipeline over in-memory image pairs.

    Runs `warmup` untimed passes over all pairs, then `repeats` timed passes
    with a monotonic clock around each stage. Returns the per-image stage
    means and the per-repeat mean latencies (for stability reporting).
    All timing is single-threaded; no parallelism is used.
    """
    if not inputs:
        raise ValueError("inputs must be non-empty")
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    for _ in range(warmup):
        for thermal, visual in inputs:
            state = pipeline.preprocess(thermal, visual)
            raw = pipeline.fuse(state)
            pipeline.postprocess(state, raw)

    sums = np.zeros(3)
    per_repeat = []
    n = len(inputs)
    for _ in range(max(1, repeats)):
        rep = np.zeros(3)
        for thermal, visual in inputs:
            t0 = time.perf_counter()
            state = pipeline.preprocess(thermal, visual)
            t1 = time.perf_counter()
            raw = pipeline.fuse(state)
            t2 = time.perf_counter()
            pipeline.postprocess(state, raw)
            t3 = time.perf_counter()
            rep += (t1 - t0, t2 - t1, t3 - t2)
        sums += rep
        per_repeat.append(rep.sum() / n * 1000.0)
    per_image = sums / (max(1, repeats) * n) * 1000.0
    report = TimingReport.from_stages(*per_image)
    return report, [float(x) for x in per_repeat]


def degrade(img: np.ndarray, kind: str) -> np.ndarray:
    """Evaluation-time sensor degradation: 15x15 gaussian blur for both
    modalities, followed by 0.6 intensity scaling for the visual one."""
    if kind not in ("visual", "thermal"):
        raise ValueError(f"kind must be 'visual' or 'thermal', got {kind!r}")
    kernel = KernelSpec(kind="gaussian", kernel_size=DEGRADE_KERNEL_SIZE,
                        sigma=DEGRADE_SIGMA)
    out = imgcore.filter_image(img, kernel)
    if kind == "visual":
        out = out * DEGRADE_VISUAL_SCALE
    return out


def parse_annotations(path: str, format: str = "voc") -> list[Annotation]:
    """Parse a whitespace-separated annotation file.

    Each line is `class_id` plus 4 box numbers in the declared format
    (voc: xmin ymin xmax ymax; coco_center: xc yc w h), with an optional
    5th number (score) on prediction lines. Blank lines and lines starting
    with '#' are skipped.
    """
    if format not in ("voc", "coco_center"):
        raise ValueError(f"format must be 'voc' or 'coco_center', got {format!r}")
    out = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            tokens = text.split()
            if len(tokens) not in (5, 6):
                raise ParseError(f"{path}:{lineno}: expected 5 or 6 fields, got {len(tokens)}")
            try:
                class_id = int(tokens[0])
                nums = [float(t) for t in tokens[1:]]
            except ValueError as e:
                raise ParseError(f"{path}:{lineno}: {e}") from None
            if format == "voc":
                xmin, ymin, xmax, ymax = nums[:4]
            else:
                xc, yc, bw, bh = nums[:4]
                xmin, ymin = xc - bw / 2.0, yc - bh / 2.0
                xmax, ymax = xc + bw / 2.0, yc + bh / 2.0
            try:
                box = BoundingBox(xmin, ymin, xmax, ymax)
            except DegenerateBox:
                raise DegenerateBox(f"{path}:{lineno}: zero/negative area box") from None
            score = nums[4] if len(nums) == 5 else None
            out.append(Annotation(class_id=class_id, box=box, score=score))
    return out
