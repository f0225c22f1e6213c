"""Line-oriented plain-text formats for detections, tubes, annotations, raw grids.

Every file starts with a one-line versioned header.  Numbers are serialized
with 9 significant digits (``%.9g``), which round-trips exactly through
binary64, so ``serialize(parse(file)) == file`` for canonical files and
pipeline outputs are bit-checkable.

Detections (one candidate box per line, frames non-decreasing inside a
video, each video one contiguous block)::

    #tubestream detections v1
    <video_id> <frame> <class_id> <x_min> <y_min> <x_max> <y_max> <confidence> <rate>

Tubes (one per line; entries are the retained frames, ``n`` of them)::

    #tubestream tubes v1
    <video_id> <class_id> <t_start> <t_end> <score> <n> <frame,x1,y1,x2,y2>...

Annotations (one box per covered frame, count implied by the range)::

    #tubestream annotations v1
    <video_id> <class_id> <t_start> <t_end> <frame,x1,y1,x2,y2>...

Raw grids (header declares the grid and anchor priors; one frame per line,
values in ``[cell_y][cell_x][anchor][attribute]`` order)::

    #tubestream rawgrid v1
    grid <S> <B> <C>
    anchors <w,h> ...
    frame <video_id> <frame> <v1> ... <vN>
"""

from __future__ import annotations

from typing import Iterable, Iterator, TextIO

import numpy as np

from .decode import AnchorSet, CandidateBox, RawGrid, attr_width
from .linker import SequencingError
from .tubes import DetectionStream, FinalTube, GroundTruthTube

DETECTIONS_HEADER = "#tubestream detections v1"
TUBES_HEADER = "#tubestream tubes v1"
ANNOTATIONS_HEADER = "#tubestream annotations v1"
RAWGRID_HEADER = "#tubestream rawgrid v1"


class RecordError(ValueError):
    """A malformed record, carrying the file path and 1-based line number."""

    def __init__(self, path: str, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


def fnum(x: float) -> str:
    return format(float(x), ".9g")


def _check_header(fh: TextIO, path: str, expected: str) -> None:
    line = fh.readline().rstrip("\n")
    if line != expected:
        raise RecordError(path, 1, f"bad header {line!r}, expected {expected!r}")


def _unit_interval(value: str, path: str, line_no: int, name: str) -> float:
    try:
        v = float(value)
    except ValueError:
        raise RecordError(path, line_no, f"field {name} is not a number: {value!r}") from None
    if not 0.0 <= v <= 1.0:
        raise RecordError(path, line_no, f"field {name} out of range [0, 1]: {value}")
    return v


def _int_field(value: str, path: str, line_no: int, name: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise RecordError(path, line_no, f"field {name} is not an integer: {value!r}") from None


# -- detections --------------------------------------------------------------


def iter_detection_rows(path: str) -> Iterator[tuple[str, int, CandidateBox]]:
    """Stream (video_id, frame, box) rows with validation; constant memory."""
    with open(path, "r", encoding="utf-8") as fh:
        _check_header(fh, path, DETECTIONS_HEADER)
        seen_videos: set[str] = set()
        cur_video: str | None = None
        cur_frame = 0
        for line_no, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) != 9:
                raise RecordError(path, line_no, f"expected 9 fields, got {len(parts)}")
            video_id = parts[0]
            frame = _int_field(parts[1], path, line_no, "frame")
            class_id = _int_field(parts[2], path, line_no, "class_id")
            if class_id < 0:
                raise RecordError(path, line_no, f"field class_id must be >= 0: {class_id}")
            x1 = _unit_interval(parts[3], path, line_no, "x_min")
            y1 = _unit_interval(parts[4], path, line_no, "y_min")
            x2 = _unit_interval(parts[5], path, line_no, "x_max")
            y2 = _unit_interval(parts[6], path, line_no, "y_max")
            if x1 >= x2 or y1 >= y2:
                raise RecordError(path, line_no, f"degenerate box ({x1}, {y1}, {x2}, {y2})")
            conf = _unit_interval(parts[7], path, line_no, "confidence")
            rate = _unit_interval(parts[8], path, line_no, "rate")
            if video_id != cur_video:
                if video_id in seen_videos:
                    raise SequencingError(f"{path}:{line_no}: video {video_id!r} appears in two blocks")
                seen_videos.add(video_id)
                cur_video = video_id
                cur_frame = frame
            elif frame < cur_frame:
                raise SequencingError(
                    f"{path}:{line_no}: frame {frame} of video {video_id!r} after frame {cur_frame}"
                )
            cur_frame = frame
            yield video_id, frame, CandidateBox(class_id, (x1, y1, x2, y2), conf, rate)


def parse_detections(path: str) -> list[DetectionStream]:
    """Group a detections file into per-video streams."""
    streams: list[DetectionStream] = []
    for video_id, frame, box in iter_detection_rows(path):
        if not streams or streams[-1].video_id != video_id:
            streams.append(DetectionStream(video_id=video_id))
        streams[-1].add(frame, box)
    return streams


def detection_line(video_id: str, frame: int, box: CandidateBox) -> str:
    g = box.geometry
    return (
        f"{video_id} {frame} {box.class_id} {fnum(g[0])} {fnum(g[1])} {fnum(g[2])} {fnum(g[3])} "
        f"{fnum(box.confidence)} {fnum(box.rate)}"
    )


class DetectionWriter:
    """Streaming detections writer; caller must append rows in file order."""

    def __init__(self, target: str | TextIO):
        self._own = isinstance(target, (str, bytes))
        self._fh = open(target, "w", encoding="utf-8") if self._own else target
        self._fh.write(DETECTIONS_HEADER + "\n")

    def add(self, video_id: str, frame: int, box: CandidateBox) -> None:
        self._fh.write(detection_line(video_id, frame, box) + "\n")

    def close(self) -> None:
        if self._own:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_detections(path: str, streams: Iterable[DetectionStream]) -> None:
    with DetectionWriter(path) as w:
        for stream in streams:
            for frame in stream.ordered_frames():
                for box in stream.boxes_at(frame):
                    w.add(stream.video_id, frame, box)


# -- tubes -------------------------------------------------------------------


class TubeWriter:
    """Streaming tube-record writer; geometry entries are written piecewise so
    arbitrarily long tubes never materialize in memory."""

    def __init__(self, target: str | TextIO):
        self._own = isinstance(target, (str, bytes))
        self._fh = open(target, "w", encoding="utf-8") if self._own else target
        self._fh.write(TUBES_HEADER + "\n")

    def write(self, video_id, class_id, t_start, t_end, score, count, entries) -> None:
        fh = self._fh
        fh.write(f"{video_id} {class_id} {t_start} {t_end} {fnum(score)} {count}")
        for frame, box in entries:
            fh.write(f" {frame},{fnum(box[0])},{fnum(box[1])},{fnum(box[2])},{fnum(box[3])}")
        fh.write("\n")

    def write_tube(self, tube: FinalTube) -> None:
        self.write(
            tube.video_id, tube.class_id, tube.t_start, tube.t_end, tube.score, len(tube.entries), tube.entries
        )

    def close(self) -> None:
        if self._own:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_tubes(path: str, tubes: Iterable[FinalTube]) -> None:
    with TubeWriter(path) as w:
        for tube in tubes:
            w.write_tube(tube)


def _parse_entry(token: str, path: str, line_no: int) -> tuple[int, tuple[float, float, float, float]]:
    parts = token.split(",")
    if len(parts) != 5:
        raise RecordError(path, line_no, f"geometry entry needs 5 comma-separated values: {token!r}")
    frame = _int_field(parts[0], path, line_no, "entry frame")
    box = tuple(_unit_interval(p, path, line_no, "entry coordinate") for p in parts[1:])
    if box[0] >= box[2] or box[1] >= box[3]:
        raise RecordError(path, line_no, f"degenerate entry box {box}")
    return frame, box


def parse_tubes(path: str) -> list[FinalTube]:
    tubes = []
    with open(path, "r", encoding="utf-8") as fh:
        _check_header(fh, path, TUBES_HEADER)
        for line_no, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) < 6:
                raise RecordError(path, line_no, f"expected at least 6 fields, got {len(parts)}")
            video_id = parts[0]
            class_id = _int_field(parts[1], path, line_no, "class_id")
            t_start = _int_field(parts[2], path, line_no, "t_start")
            t_end = _int_field(parts[3], path, line_no, "t_end")
            score = _unit_interval(parts[4], path, line_no, "score")
            count = _int_field(parts[5], path, line_no, "n")
            if len(parts) != 6 + count:
                raise RecordError(path, line_no, f"declared {count} entries, found {len(parts) - 6}")
            entries = tuple(_parse_entry(tok, path, line_no) for tok in parts[6:])
            if entries and (entries[0][0] != t_start or entries[-1][0] != t_end):
                raise RecordError(path, line_no, "entry frames do not span the declared range")
            tubes.append(FinalTube(video_id, class_id, t_start, t_end, score, entries))
    return tubes


# -- annotations ---------------------------------------------------------------


def write_annotations(path: str, tubes: Iterable[GroundTruthTube]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(ANNOTATIONS_HEADER + "\n")
        for t in tubes:
            fh.write(f"{t.video_id} {t.class_id} {t.t_start} {t.t_end}")
            for frame in range(t.t_start, t.t_end + 1):
                b = t.box_at(frame)
                fh.write(f" {frame},{fnum(b[0])},{fnum(b[1])},{fnum(b[2])},{fnum(b[3])}")
            fh.write("\n")


def parse_annotations(path: str) -> list[GroundTruthTube]:
    tubes = []
    with open(path, "r", encoding="utf-8") as fh:
        _check_header(fh, path, ANNOTATIONS_HEADER)
        for line_no, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) < 5:
                raise RecordError(path, line_no, f"expected at least 5 fields, got {len(parts)}")
            video_id = parts[0]
            class_id = _int_field(parts[1], path, line_no, "class_id")
            t_start = _int_field(parts[2], path, line_no, "t_start")
            t_end = _int_field(parts[3], path, line_no, "t_end")
            span = t_end - t_start + 1
            if len(parts) != 4 + span:
                raise RecordError(path, line_no, f"range covers {span} frames, found {len(parts) - 4} boxes")
            boxes = []
            for k, tok in enumerate(parts[4:]):
                frame, box = _parse_entry(tok, path, line_no)
                if frame != t_start + k:
                    raise RecordError(path, line_no, f"entry frame {frame} out of order, expected {t_start + k}")
                boxes.append(box)
            tubes.append(GroundTruthTube(video_id, class_id, t_start, t_end, tuple(boxes)))
    return tubes


# -- raw grids -----------------------------------------------------------------


def write_rawgrids(
    path: str,
    anchors: AnchorSet,
    grids: Iterable[tuple[str, int, RawGrid]],
    dims: tuple[int, int, int],
) -> None:
    s, b, c = dims
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(RAWGRID_HEADER + "\n")
        fh.write(f"grid {s} {b} {c}\n")
        fh.write("anchors " + " ".join(f"{fnum(w)},{fnum(h)}" for w, h in anchors.sizes) + "\n")
        for video_id, frame, grid in grids:
            flat = np.asarray(grid.values, dtype=np.float64).reshape(-1)
            fh.write(f"frame {video_id} {frame} " + " ".join(fnum(v) for v in flat) + "\n")


def read_rawgrids(path: str) -> tuple[tuple[int, int, int], AnchorSet, Iterator[tuple[str, int, RawGrid]]]:
    """Returns the grid dims, anchors, and a frame generator (consume fully
    before closing; the generator owns the file handle)."""
    fh = open(path, "r", encoding="utf-8")
    try:
        _check_header(fh, path, RAWGRID_HEADER)
        grid_line = fh.readline().rstrip("\n").split(" ")
        if len(grid_line) != 4 or grid_line[0] != "grid":
            raise RecordError(path, 2, "expected 'grid S B C'")
        s = _int_field(grid_line[1], path, 2, "S")
        b = _int_field(grid_line[2], path, 2, "B")
        c = _int_field(grid_line[3], path, 2, "C")
        anchor_line = fh.readline().rstrip("\n").split(" ")
        if anchor_line[0] != "anchors" or len(anchor_line) != 1 + b:
            raise RecordError(path, 3, f"expected 'anchors' with {b} w,h pairs")
        sizes = []
        for tok in anchor_line[1:]:
            w_h = tok.split(",")
            if len(w_h) != 2:
                raise RecordError(path, 3, f"anchor must be w,h: {tok!r}")
            sizes.append((float(w_h[0]), float(w_h[1])))
        anchors = AnchorSet(tuple(sizes))
    except Exception:
        fh.close()
        raise

    n_values = s * s * b * attr_width(c)

    def frames() -> Iterator[tuple[str, int, RawGrid]]:
        with fh:
            for line_no, line in enumerate(fh, start=4):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split(" ")
                if parts[0] != "frame" or len(parts) != 3 + n_values:
                    raise RecordError(path, line_no, f"expected 'frame video t' plus {n_values} values")
                video_id = parts[1]
                frame = _int_field(parts[2], path, line_no, "frame")
                try:
                    values = np.array(parts[3:], dtype=np.float64)
                except ValueError:
                    raise RecordError(path, line_no, "non-numeric grid value") from None
                yield video_id, frame, RawGrid(s, b, c, values)

    return (s, b, c), anchors, frames()
