"""Detection and tube evaluation: AP/mAP at frame and video level, temporal recovery.

Matching is the usual greedy one-to-one scheme: detections are visited in
order of decreasing score, each claims the not-yet-matched ground truth with
the highest overlap, and counts as a true positive when that overlap is
strictly above the threshold.  AP is the area under the all-point
interpolated precision-recall curve.  Classes absent from the ground truth
are excluded from every mean.

Tube overlap multiplies the mean per-frame spatial IoU over the temporal
intersection with the temporal IoU of the frame ranges; frames of the
intersection where the detected tube has no box count as spatial IoU 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Hashable, Iterable, Sequence

from .decode import CandidateBox
from .geometry import box_iou, temporal_iou  # noqa: F401  (re-exported as part of the metric surface)
from .tubes import FinalTube, GroundTruthTube

VMAP_AVG_BAND = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
DEFAULT_TUBE_THRESHOLDS = tuple(sorted({0.1, 0.2, 0.3, 0.5, 0.75} | set(VMAP_AVG_BAND)))


def tube_iou(det: FinalTube, gt: GroundTruthTube) -> float:
    """Spatio-temporal overlap of a detected tube and an annotated tube."""
    t_lo = max(det.t_start, gt.t_start)
    t_hi = min(det.t_end, gt.t_end)
    if t_lo > t_hi:
        return 0.0
    det_boxes = dict(det.entries)
    total = 0.0
    for f in range(t_lo, t_hi + 1):
        bx = det_boxes.get(f)
        if bx is not None:
            total += box_iou(bx, gt.box_at(f))
    spatial = total / (t_hi - t_lo + 1)
    return spatial * temporal_iou((det.t_start, det.t_end), (gt.t_start, gt.t_end))


def average_precision(
    detections: Sequence[tuple[float, Hashable, object]],
    ground_truths: Sequence[tuple[Hashable, object]],
    overlap: Callable[[object, object], float],
    threshold: float,
) -> float:
    """AP of one class.

    ``detections`` are (score, group, item) triples and ``ground_truths``
    are (group, item) pairs; a detection can only match ground truth in the
    same group (same video, or same video+frame).  Ties in score keep input
    order; ties in overlap go to the earlier ground-truth entry.
    """
    n_gt = len(ground_truths)
    if n_gt == 0 or not detections:
        return 0.0
    by_group: dict[Hashable, list[list]] = {}
    for group, item in ground_truths:
        by_group.setdefault(group, []).append([item, False])

    ordered = sorted(detections, key=lambda d: -d[0])
    tp_flags = []
    for score, group, item in ordered:
        best = None
        best_ov = 0.0
        for slot in by_group.get(group, []):
            if slot[1]:
                continue
            ov = overlap(item, slot[0])
            if ov > best_ov:
                best_ov = ov
                best = slot
        if best is not None and best_ov > threshold:
            best[1] = True
            tp_flags.append(True)
        else:
            tp_flags.append(False)

    # Area under the all-point interpolated precision-recall curve.
    ap = 0.0
    best_precision_from = [0.0] * (len(tp_flags) + 1)
    n_tp_total = sum(tp_flags)
    running_tp = n_tp_total
    for k in range(len(tp_flags) - 1, -1, -1):
        precision = running_tp / (k + 1)
        best_precision_from[k] = max(best_precision_from[k + 1], precision)
        if tp_flags[k]:
            running_tp -= 1
    for k, flag in enumerate(tp_flags):
        if flag:
            ap += best_precision_from[k] / n_gt
    return ap


def _mean(values: Iterable[float]) -> float:
    vals = list(values)
    return sum(vals) / len(vals) if vals else 0.0


FrameDetection = tuple[str, int, CandidateBox]


def frame_map(
    detections: Sequence[FrameDetection],
    gt_tubes: Sequence[GroundTruthTube],
    threshold: float = 0.5,
) -> tuple[float, dict[int, float]]:
    """Frame-level mAP: per-class AP over all (video, frame) pooled boxes."""
    classes = sorted({t.class_id for t in gt_tubes})
    per_class: dict[int, float] = {}
    for class_id in classes:
        dets = [
            (bx.confidence, (vid, f), bx.geometry)
            for vid, f, bx in detections
            if bx.class_id == class_id
        ]
        gts = [
            ((t.video_id, f), t.box_at(f))
            for t in gt_tubes
            if t.class_id == class_id
            for f in range(t.t_start, t.t_end + 1)
        ]
        per_class[class_id] = average_precision(dets, gts, box_iou, threshold)
    return _mean(per_class.values()), per_class


def video_map(
    tubes: Sequence[FinalTube],
    gt_tubes: Sequence[GroundTruthTube],
    thresholds: Sequence[float] = DEFAULT_TUBE_THRESHOLDS,
) -> tuple[dict[float, float], dict[float, dict[int, float]]]:
    """Video-level mAP at each tube-overlap threshold."""
    classes = sorted({t.class_id for t in gt_tubes})
    v_map: dict[float, float] = {}
    per_class: dict[float, dict[int, float]] = {}
    for threshold in thresholds:
        threshold = round(threshold, 2)
        aps = {}
        for class_id in classes:
            dets = [(t.score, t.video_id, t) for t in tubes if t.class_id == class_id]
            gts = [(t.video_id, t) for t in gt_tubes if t.class_id == class_id]
            aps[class_id] = average_precision(dets, gts, tube_iou, threshold)
        per_class[threshold] = aps
        v_map[threshold] = _mean(aps.values())
    return v_map, per_class


def average_temporal_iou(
    tubes: Sequence[FinalTube],
    gt_tubes: Sequence[GroundTruthTube],
) -> tuple[dict[int, float], dict[int, float]]:
    """Per-class mean temporal IoU between each annotated tube and its best
    same-class detection in the same video.

    Returned twice under two readings of "best": highest temporal IoU
    (first dict, the headline number) and highest detection score (second).
    Annotated tubes with no detection contribute 0.
    """
    classes = sorted({t.class_id for t in gt_tubes})
    best_overlap: dict[int, float] = {}
    best_score: dict[int, float] = {}
    for class_id in classes:
        ov_vals, sc_vals = [], []
        for gt in (t for t in gt_tubes if t.class_id == class_id):
            same = [
                t for t in tubes if t.class_id == class_id and t.video_id == gt.video_id
            ]
            tious = [temporal_iou((t.t_start, t.t_end), (gt.t_start, gt.t_end)) for t in same]
            ov_vals.append(max(tious, default=0.0))
            if same:
                top = max(range(len(same)), key=lambda i: same[i].score)
                sc_vals.append(tious[top])
            else:
                sc_vals.append(0.0)
        best_overlap[class_id] = _mean(ov_vals)
        best_score[class_id] = _mean(sc_vals)
    return best_overlap, best_score


@dataclass
class EvalReport:
    """Full evaluation summary; ``rows`` flattens it for CSV export."""

    f_map: float
    f_ap: dict[int, float]
    v_map: dict[float, float]
    v_ap: dict[float, dict[int, float]]
    v_map_avg: float | None
    t_iou: dict[int, float]
    t_iou_by_score: dict[int, float]
    frame_threshold: float = 0.5

    def rows(self) -> list[tuple[str, str, str, float]]:
        out: list[tuple[str, str, str, float]] = [("f_map", "", _fmt_thr(self.frame_threshold), self.f_map)]
        out += [("f_ap", str(c), _fmt_thr(self.frame_threshold), v) for c, v in sorted(self.f_ap.items())]
        out += [("v_map", "", _fmt_thr(d), v) for d, v in sorted(self.v_map.items())]
        if self.v_map_avg is not None:
            out.append(("v_map_avg", "", "0.5:0.95", self.v_map_avg))
        for d in sorted(self.v_ap):
            out += [("v_ap", str(c), _fmt_thr(d), v) for c, v in sorted(self.v_ap[d].items())]
        out += [("avg_t_iou", str(c), "", v) for c, v in sorted(self.t_iou.items())]
        out += [("avg_t_iou_by_score", str(c), "", v) for c, v in sorted(self.t_iou_by_score.items())]
        return out

    def table(self) -> str:
        lines = [f"{'metric':<20}{'class':>6}{'threshold':>11}{'value':>13}"]
        for metric, cls, thr, value in self.rows():
            lines.append(f"{metric:<20}{cls:>6}{thr:>11}{value:>13.6f}")
        return "\n".join(lines)


def _fmt_thr(threshold: float) -> str:
    return format(threshold, "g")


def evaluate(
    tubes: Sequence[FinalTube],
    gt_tubes: Sequence[GroundTruthTube],
    frame_detections: Sequence[FrameDetection] | None = None,
    tube_thresholds: Sequence[float] = DEFAULT_TUBE_THRESHOLDS,
    frame_threshold: float = 0.5,
) -> EvalReport:
    """Score a detection run against annotations.

    When no per-frame detections are supplied, frame-level AP is computed
    over the tubes' retained boxes, each scored with its tube's score.
    """
    if frame_detections is None:
        frame_detections = [
            (t.video_id, f, CandidateBox(t.class_id, bx, t.score, 0.0))
            for t in tubes
            for f, bx in t.entries
        ]
    f_map_val, f_ap = frame_map(frame_detections, gt_tubes, frame_threshold)
    v_map_val, v_ap = video_map(tubes, gt_tubes, tube_thresholds)
    if all(d in v_map_val for d in VMAP_AVG_BAND):
        v_map_avg = sum(v_map_val[d] for d in VMAP_AVG_BAND) / len(VMAP_AVG_BAND)
    else:
        v_map_avg = None
    t_iou, t_iou_by_score = average_temporal_iou(tubes, gt_tubes)
    return EvalReport(
        f_map=f_map_val,
        f_ap=f_ap,
        v_map=v_map_val,
        v_ap=v_ap,
        v_map_avg=v_map_avg,
        t_iou=t_iou,
        t_iou_by_score=t_iou_by_score,
        frame_threshold=frame_threshold,
    )
