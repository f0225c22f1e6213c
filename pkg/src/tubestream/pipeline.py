"""Pipeline stages gluing decode, linking, and evaluation to the file formats.

The link stage is strictly streaming: detection rows are read frame by
frame, thresholded and NMS-deduplicated per class, pushed through one
:class:`~tubestream.linker.OnlineLinker` per video with committed tube
entries spilled to disk, and finished tubes are written out as they
complete.  Memory is bounded by the linker window and the widest single
frame, independent of stream length.
"""

from __future__ import annotations

import csv
import tempfile
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, Iterator

from . import records
from .config import RunConfig
from .decode import CandidateBox, decode_grid, filter_and_nms, nms_boxes
from .linker import OnlineLinker, SpillStore, link_stream
from .metrics import EvalReport, evaluate
from .tubes import DetectionStream, FinalTube, GroundTruthTube


def nms_frame(boxes: list[CandidateBox], score_threshold: float, nms_iou: float) -> list[CandidateBox]:
    """Per-class threshold + NMS over one frame's mixed-class box list."""
    by_class: dict[int, list[CandidateBox]] = {}
    for bx in boxes:
        if bx.confidence > score_threshold:
            by_class.setdefault(bx.class_id, []).append(bx)
    out: list[CandidateBox] = []
    for class_id in sorted(by_class):
        out.extend(nms_boxes(by_class[class_id], nms_iou))
    return out


def iter_frames(
    rows: Iterable[tuple[str, int, CandidateBox]],
) -> Iterator[tuple[str, int, list[CandidateBox]]]:
    """Group a row stream into (video, frame, boxes) groups, preserving order."""
    cur: tuple[str, int] | None = None
    bucket: list[CandidateBox] = []
    for video_id, frame, box in rows:
        key = (video_id, frame)
        if key != cur:
            if cur is not None:
                yield cur[0], cur[1], bucket
            cur = key
            bucket = []
        bucket.append(box)
    if cur is not None:
        yield cur[0], cur[1], bucket


def run_decode(config: RunConfig, grids_path: str, out_path: str) -> int:
    """Decode a raw-grid file into a detections file; returns boxes written."""
    _, anchors, frames = records.read_rawgrids(grids_path)
    n = 0
    with records.DetectionWriter(out_path) as writer:
        for video_id, frame, grid in frames:
            decoded = decode_grid(grid, anchors)
            per_class = filter_and_nms(decoded, config.score_threshold, config.nms_iou)
            for class_id in sorted(per_class):
                for box in per_class[class_id]:
                    writer.add(video_id, frame, box)
                    n += 1
    return n


def run_link(
    config: RunConfig,
    detections_path: str,
    tubes_path: str,
    spool_dir: str | None = None,
) -> int:
    """Link a detections file into a tubes file, streaming; returns tube count."""
    linker_cfg = config.linker_config()
    count = 0

    with records.TubeWriter(tubes_path) as writer, tempfile.TemporaryDirectory(dir=spool_dir) as spool:

        def sink(*tube_fields):
            nonlocal count
            writer.write(*tube_fields)
            count += 1

        linker: OnlineLinker | None = None
        for video_id, frame, boxes in iter_frames(records.iter_detection_rows(detections_path)):
            if linker is None or linker.video_id != video_id:
                if linker is not None:
                    linker.finalize()
                linker = OnlineLinker(
                    config=linker_cfg,
                    video_id=video_id,
                    store_factory=lambda: SpillStore(spool),
                    on_tube=sink,
                )
            linker.step(frame, nms_frame(boxes, config.score_threshold, config.nms_iou))
        if linker is not None:
            linker.finalize()
    return count


def link_parsed_stream(
    stream: DetectionStream,
    config: RunConfig,
    apply_nms: bool = True,
) -> tuple[list[FinalTube], list[tuple[str, int, CandidateBox]]]:
    """In-memory link of one parsed stream; also returns the post-NMS rows
    (the frame-level detections that the evaluation stage scores)."""
    linker_cfg = config.linker_config()
    frame_rows: list[tuple[str, int, CandidateBox]] = []
    frames = []
    for t in stream.ordered_frames():
        boxes = stream.boxes_at(t)
        if apply_nms:
            boxes = nms_frame(boxes, config.score_threshold, config.nms_iou)
        frames.append((t, boxes))
        frame_rows.extend((stream.video_id, t, bx) for bx in boxes)
    tubes = link_stream(frames, config=linker_cfg, video_id=stream.video_id)
    return tubes, frame_rows


def run_pipeline(
    config: RunConfig,
    streams: list[DetectionStream] | None = None,
    gt_tubes: list[GroundTruthTube] | None = None,
) -> tuple[EvalReport, list[FinalTube]]:
    """Full detections -> tubes -> report composition.

    Inputs may be passed in memory or read from the configured paths.  Videos
    are linked independently (in parallel when ``jobs > 1``); results are
    assembled in input order so output is deterministic regardless of jobs.
    """
    if streams is None:
        if config.detections is None:
            raise ValueError("no detections input configured")
        streams = records.parse_detections(config.detections)
    if gt_tubes is None:
        if config.annotations is None:
            raise ValueError("evaluation requested but no annotations configured")
        gt_tubes = records.parse_annotations(config.annotations)

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            linked = list(pool.map(lambda s: link_parsed_stream(s, config), streams))
    else:
        linked = [link_parsed_stream(s, config) for s in streams]

    tubes = [t for video_tubes, _ in linked for t in video_tubes]
    frame_rows = [row for _, rows in linked for row in rows]

    report = evaluate(
        tubes,
        gt_tubes,
        frame_detections=frame_rows,
        tube_thresholds=config.deltas,
        frame_threshold=config.frame_threshold,
    )
    if config.tubes:
        records.write_tubes(config.tubes, tubes)
    if config.report:
        write_report_csv(config.report, report)
    return report, tubes


def run_eval(
    config: RunConfig,
    tubes_path: str,
    annotations_path: str,
    detections_path: str | None = None,
) -> EvalReport:
    """Score a tubes file against annotations; optional detections feed the
    frame-level metric (otherwise it is computed from the tubes' boxes)."""
    tubes = records.parse_tubes(tubes_path)
    gt_tubes = records.parse_annotations(annotations_path)
    frame_rows = None
    if detections_path is not None:
        frame_rows = list(records.iter_detection_rows(detections_path))
    report = evaluate(
        tubes,
        gt_tubes,
        frame_detections=frame_rows,
        tube_thresholds=config.deltas,
        frame_threshold=config.frame_threshold,
    )
    if config.report:
        write_report_csv(config.report, report)
    return report


def write_report_csv(path: str, report: EvalReport) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "class", "threshold", "value"])
        for metric, cls, thr, value in report.rows():
            writer.writerow([metric, cls, thr, records.fnum(value)])
