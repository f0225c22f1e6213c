"""Online action-tube generation with rate-driven temporal labeling.

Per class, candidate boxes are greedily linked frame by frame into tubes:
tubes are visited in order of decreasing average score, each consumes the
highest-scoring box whose IoU with the tube's last box exceeds the gate, and
leftover boxes seed new tubes.  A tube that goes unlinked for ``window``
consecutive frames is complete.

Every linked box also updates the tube's temporal labels.  Two saturating
counters track consecutive rate increases (``n_up``) and decreases
(``n_down``); when either saturates at ``window``, the trailing window of
frames is relabeled 1 (sustained rise: the action is underway) or 0
(sustained fall or plateau: it is not).  Otherwise the trailing window is
labeled 1 when its mean confidence exceeds ``alpha``, the per-class
trade-off between score-driven and rate-driven labeling: ``alpha = 1``
disables the score path entirely, ``alpha = 0`` makes any positive score
sufficient.

Labels are only ever edited inside the trailing ``window`` frames.  Older
entries are committed out of the mutable window (optionally spilled to
disk), which is what keeps memory per tube bounded by the window size on
arbitrarily long streams, and what guarantees the online contract: the
label of a frame more than ``window`` frames behind the stream head never
changes, and nothing ever depends on future frames.

At stream end each tube is trimmed to the frames labeled 1: the emitted
tube covers the tightest interval around them, carries only those frames'
boxes, and is rescored as their mean confidence.  Tubes with no labeled
frame are dropped.
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

from .decode import CandidateBox
from .geometry import Box, box_iou
from .tubes import FinalTube

ACTIVE = "active"
COMPLETED = "completed"


class SequencingError(ValueError):
    """Frames were presented out of order."""


def alpha_from_training_error(rate_error: float) -> float:
    """Map a class's mean progress-rate training error to its labeling trade-off.

    ``exp(-err^2 / 1e-2)``: a perfectly learned rate gives 1 (labeling driven
    purely by rates); a large error - typical for periodic actions whose rate
    is unpredictable - gives ~0, routing labeling through confidence scores.
    """
    if rate_error < 0:
        raise ValueError("rate error must be non-negative")
    return math.exp(-(rate_error**2) / 1e-2)


@dataclass(frozen=True)
class LinkerConfig:
    """Knobs of the online linker.

    ``alphas`` may be a single float applied to every class or a sequence
    with one entry per class.
    """

    iou_gate: float = 0.3
    window: int = 6
    max_tubes: int = 10
    alphas: float | tuple[float, ...] = 0.5
    score_floor: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.iou_gate < 1.0:
            raise ValueError("iou_gate must lie in (0, 1)")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.max_tubes < 1:
            raise ValueError("max_tubes must be >= 1")
        for a in self.alphas if isinstance(self.alphas, (tuple, list)) else (self.alphas,):
            if not 0.0 <= a <= 1.0:
                raise ValueError("every alpha must lie in [0, 1]")

    def alpha_for(self, class_id: int) -> float:
        if isinstance(self.alphas, (tuple, list)):
            return self.alphas[class_id]
        return self.alphas


class TubeEntry:
    """One linked box inside a tube."""

    __slots__ = ("frame", "box", "score", "rate", "label")

    def __init__(self, frame: int, box: Box | None, score: float, rate: float, label: int):
        self.frame = frame
        self.box = box
        self.score = score
        self.rate = rate
        self.label = label


class MemoryStore:
    """Committed-entry store backed by a plain list."""

    def __init__(self):
        self._items: list[TubeEntry] = []

    def append(self, entry: TubeEntry) -> None:
        self._items.append(entry)

    def __iter__(self) -> Iterator[TubeEntry]:
        return iter(self._items)

    def discard(self) -> None:
        self._items.clear()


_SPILL_RECORD = struct.Struct("<q6dB")


class SpillStore:
    """Committed-entry store spilled to a temp file.

    Keeps linker memory independent of stream length: committed entries are
    immutable, so they live on disk until the tube is finalized.  The file is
    created lazily (most short-lived tubes never commit anything).
    """

    def __init__(self, directory: str | None = None):
        self._dir = directory
        self._fh = None
        self._path: str | None = None

    def append(self, entry: TubeEntry) -> None:
        if self._fh is None:
            fd, self._path = tempfile.mkstemp(suffix=".spill", dir=self._dir)
            self._fh = os.fdopen(fd, "wb")
        x1, y1, x2, y2 = entry.box if entry.box is not None else (0.0, 0.0, 0.0, 0.0)
        self._fh.write(
            _SPILL_RECORD.pack(entry.frame, x1, y1, x2, y2, entry.score, entry.rate, entry.label)
        )

    def __iter__(self) -> Iterator[TubeEntry]:
        if self._fh is None:
            return
        self._fh.flush()
        with open(self._path, "rb") as fh:
            while True:
                blob = fh.read(_SPILL_RECORD.size * 1024)
                if not blob:
                    break
                for off in range(0, len(blob), _SPILL_RECORD.size):
                    frame, x1, y1, x2, y2, score, rate, label = _SPILL_RECORD.unpack_from(blob, off)
                    yield TubeEntry(frame, (x1, y1, x2, y2), score, rate, label)

    def discard(self) -> None:
        if self._fh is not None:
            self._fh.close()
            os.unlink(self._path)
            self._fh = None
            self._path = None


class TubeState:
    """A live tube: committed entries, the mutable trailing window, counters."""

    __slots__ = (
        "class_id",
        "seq",
        "t_start",
        "t_end",
        "store",
        "window",
        "n_up",
        "n_down",
        "score_sum",
        "n_linked",
        "last_geometry",
        "frames_since_link",
        "status",
    )

    def __init__(
        self,
        class_id: int,
        frame: int,
        box: Box | None,
        score: float,
        rate: float,
        seq: int = 0,
        store=None,
    ):
        self.class_id = class_id
        self.seq = seq
        self.t_start = frame
        self.t_end = frame
        self.store = store if store is not None else MemoryStore()
        self.window: list[TubeEntry] = [TubeEntry(frame, box, score, rate, 0)]
        self.n_up = 0
        self.n_down = 0
        self.score_sum = score
        self.n_linked = 1
        self.last_geometry = box
        self.frames_since_link = 0
        self.status = ACTIVE

    @property
    def avg_score(self) -> float:
        return self.score_sum / self.n_linked

    @property
    def entries(self) -> list[TubeEntry]:
        return list(self.store) + self.window

    @property
    def boxes(self) -> list[tuple[int, Box | None, float, float]]:
        return [(e.frame, e.box, e.score, e.rate) for e in self.entries]

    @property
    def labels(self) -> list[int]:
        return [e.label for e in self.entries]

    def commit_through(self, frame: int) -> None:
        """Move entries at or before ``frame`` out of the mutable window."""
        n = 0
        for e in self.window:
            if e.frame > frame:
                break
            n += 1
        if n:
            for e in self.window[:n]:
                self.store.append(e)
            del self.window[:n]


def temporal_label_step(
    tube: TubeState,
    frame: int,
    score: float,
    rate: float,
    alpha: float,
    window: int,
    box: Box | None = None,
) -> None:
    """Link one more box into ``tube`` and refresh its temporal labels.

    The new frame's label starts as a copy of the previous one.  The rate
    comparison against the previous linked box bumps the saturating
    counters (a tie counts as a decrease); a saturated ``n_up`` relabels the
    trailing ``window`` frames 1, a saturated ``n_down`` relabels them 0,
    and otherwise a trailing mean confidence above ``alpha`` relabels them 1.
    Only entries with ``frame > new_frame - window`` are touched; near the
    tube start the window simply clips.
    """
    if not tube.window:
        raise ValueError("temporal_label_step requires the previous box in the mutable window")
    prev = tube.window[-1]
    if frame <= prev.frame:
        raise SequencingError(f"frame {frame} not after previous linked frame {prev.frame}")

    entry = TubeEntry(frame, box, score, rate, prev.label)
    tube.window.append(entry)
    tube.score_sum += score
    tube.n_linked += 1
    tube.t_end = frame
    if box is not None:
        tube.last_geometry = box

    if rate > prev.rate:
        tube.n_up = min(window, tube.n_up + 1)
        tube.n_down = max(0, tube.n_down - 1)
    else:
        tube.n_down = min(window, tube.n_down + 1)
        tube.n_up = max(0, tube.n_up - 1)

    # Trailing entries with frame in [frame - window + 1, frame].
    lo = frame - window + 1
    tail = []
    for e in reversed(tube.window):
        if e.frame < lo:
            break
        tail.append(e)

    if tube.n_up == window:
        for e in tail:
            e.label = 1
    elif tube.n_down == window:
        for e in tail:
            e.label = 0
    else:
        mean = sum(e.score for e in reversed(tail)) / len(tail)
        if mean > alpha:
            for e in tail:
                e.label = 1


@dataclass(frozen=True)
class LinkAudit:
    """Full pre-trim state of a tube at its terminal event (for differential tests)."""

    class_id: int
    seq: int
    t_start: int
    frames: tuple[int, ...]
    boxes: tuple[Box | None, ...]
    scores: tuple[float, ...]
    rates: tuple[float, ...]
    labels: tuple[int, ...]
    avg_score: float
    outcome: str  # "emitted" | "empty" | "pruned"


TubeSink = Callable[[str, int, int, int, float, int, Iterator[tuple[int, Box]]], None]


class OnlineLinker:
    """Streaming per-video tube builder over all classes.

    Feed frames in strictly increasing order via :meth:`step`; call
    :meth:`finalize` once the stream ends.  Frame indices may skip (a frame
    with no candidates can be presented as an empty list or simply omitted;
    presenting it lets completions and the keep-best pruning take effect on
    schedule rather than at the next populated frame).  By default finished tubes are
    collected as :class:`FinalTube` objects.  Passing ``on_tube`` streams
    them out instead: the callback receives
    ``(video_id, class_id, t_start, t_end, score, n_entries, entries)``
    where ``entries`` is a single-use iterator of (frame, box) pairs that
    must be consumed inside the callback.
    """

    def __init__(
        self,
        n_classes: int | None = None,
        config: LinkerConfig | None = None,
        video_id: str = "video",
        store_factory: Callable[[], MemoryStore | SpillStore] | None = None,
        on_tube: TubeSink | None = None,
        audit: bool = False,
    ):
        if n_classes is not None and n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        self.config = config if config is not None else LinkerConfig()
        self.video_id = video_id
        self.n_classes = n_classes
        self._store_factory = store_factory if store_factory is not None else MemoryStore
        self._on_tube = on_tube
        # With a known class count every lane exists up front; otherwise lanes
        # appear as their classes first show up in the stream.
        self._lanes: dict[int, list[TubeState]] = {c: [] for c in range(n_classes)} if n_classes else {}
        self._head: int | None = None
        self._seq = 0
        self._results: list[FinalTube] = []
        self.audit_log: list[LinkAudit] | None = [] if audit else None
        self._finalized = False

    # -- lifecycle ---------------------------------------------------------

    def step(self, frame: int, boxes: Iterable[CandidateBox]) -> list[FinalTube]:
        """Process one frame's candidate boxes; returns tubes completed now
        (empty list when streaming through ``on_tube``)."""
        if self._finalized:
            raise SequencingError("linker already finalized")
        if self._head is not None and frame <= self._head:
            raise SequencingError(f"frame {frame} not after stream head {self._head}")
        first = self._head is None
        self._head = frame

        by_class: dict[int, list[CandidateBox]] = {}
        for bx in boxes:
            if bx.class_id < 0 or (self.n_classes is not None and bx.class_id >= self.n_classes):
                raise ValueError(f"box class {bx.class_id} out of range for {self.n_classes} classes")
            by_class.setdefault(bx.class_id, []).append(bx)

        emitted_before = len(self._results)
        cfg = self.config
        for class_id in sorted(set(self._lanes) | set(by_class)):
            lane = self._lanes.setdefault(class_id, [])
            frame_boxes = by_class.get(class_id, [])
            if first:
                eligible = sorted(
                    (b for b in frame_boxes if b.confidence > cfg.score_floor),
                    key=lambda b: -b.confidence,
                )
                for bx in eligible[: cfg.max_tubes]:
                    lane.append(self._new_tube(class_id, frame, bx))
                continue

            # Keep the best max_tubes live tubes, then let each take one box.
            lane.sort(key=lambda tb: (-tb.avg_score, tb.t_start, tb.seq))
            for tb in lane[cfg.max_tubes :]:
                self._retire(tb, "pruned")
            del lane[cfg.max_tubes :]

            remaining = frame_boxes
            alpha = cfg.alpha_for(class_id)
            survivors: list[TubeState] = []
            for tb in lane:
                best = -1
                best_score = -1.0
                for i, cand in enumerate(remaining):
                    if cand.confidence > best_score and box_iou(cand.geometry, tb.last_geometry) > cfg.iou_gate:
                        best = i
                        best_score = cand.confidence
                if best >= 0:
                    cand = remaining.pop(best)
                    temporal_label_step(
                        tb, frame, cand.confidence, cand.rate, alpha, cfg.window, box=cand.geometry
                    )
                    tb.frames_since_link = 0
                else:
                    tb.frames_since_link = frame - tb.t_end
                if tb.frames_since_link >= cfg.window:
                    tb.status = COMPLETED
                    self._emit(tb)
                else:
                    survivors.append(tb)
            self._lanes[class_id] = lane = survivors

            for tb in lane:
                tb.commit_through(frame - cfg.window)

            for bx in remaining:
                if bx.confidence > cfg.score_floor:
                    lane.append(self._new_tube(class_id, frame, bx))

        return self._results[emitted_before:]

    def finalize(self) -> list[FinalTube]:
        """Flush every live tube and return all finished tubes of the stream
        (collection mode) or an empty list (sink mode)."""
        if not self._finalized:
            self._finalized = True
            for class_id in sorted(self._lanes):
                for tb in sorted(self._lanes[class_id], key=lambda tb: (tb.t_start, tb.seq)):
                    tb.status = COMPLETED
                    self._emit(tb)
                self._lanes[class_id] = []
        return list(self._results)

    # -- internals ---------------------------------------------------------

    def _new_tube(self, class_id: int, frame: int, bx: CandidateBox) -> TubeState:
        tube = TubeState(
            class_id,
            frame,
            bx.geometry,
            bx.confidence,
            bx.rate,
            seq=self._seq,
            store=self._store_factory(),
        )
        self._seq += 1
        return tube

    def _iter_all(self, tube: TubeState) -> Iterator[TubeEntry]:
        yield from tube.store
        yield from tube.window

    def _audit_tube(self, tube: TubeState, outcome: str) -> None:
        entries = list(self._iter_all(tube))
        self.audit_log.append(
            LinkAudit(
                class_id=tube.class_id,
                seq=tube.seq,
                t_start=tube.t_start,
                frames=tuple(e.frame for e in entries),
                boxes=tuple(e.box for e in entries),
                scores=tuple(e.score for e in entries),
                rates=tuple(e.rate for e in entries),
                labels=tuple(e.label for e in entries),
                avg_score=tube.avg_score,
                outcome=outcome,
            )
        )

    def _retire(self, tube: TubeState, outcome: str) -> None:
        if self.audit_log is not None:
            self._audit_tube(tube, outcome)
        tube.store.discard()

    def _emit(self, tube: TubeState) -> None:
        first = last = None
        score_sum = 0.0
        count = 0
        for e in self._iter_all(tube):
            if e.label:
                if first is None:
                    first = e.frame
                last = e.frame
                score_sum += e.score
                count += 1
        if count == 0:
            self._retire(tube, "empty")
            return
        if self.audit_log is not None:
            self._audit_tube(tube, "emitted")
        score = score_sum / count
        kept = ((e.frame, e.box) for e in self._iter_all(tube) if e.label)
        if self._on_tube is not None:
            self._on_tube(self.video_id, tube.class_id, first, last, score, count, kept)
        else:
            self._results.append(
                FinalTube(
                    video_id=self.video_id,
                    class_id=tube.class_id,
                    t_start=first,
                    t_end=last,
                    score=score,
                    entries=tuple(kept),
                )
            )
        tube.store.discard()


def link_stream(
    frames: Iterable[tuple[int, list[CandidateBox]]],
    n_classes: int | None = None,
    config: LinkerConfig | None = None,
    video_id: str = "video",
) -> list[FinalTube]:
    """Run the linker over an in-memory (frame, boxes) sequence."""
    linker = OnlineLinker(n_classes, config, video_id=video_id)
    for frame, boxes in frames:
        linker.step(frame, boxes)
    return linker.finalize()
