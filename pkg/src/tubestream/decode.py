"""Decode raw per-frame detection grids into scored candidate boxes.

The detector emits, per frame, an ``S x S x B x (5 + 3C)`` tensor of raw
logits: for every grid cell and anchor there are four box offsets, an
actionness logit, and three per-class blocks (classification, progression,
progress rate).  This module activates those logits, applies the anchor
decode (sigmoid center offsets inside the owning cell, exponential sizes on
the anchor prior), composes per-class confidences as
``actionness * class_score * progression``, and reduces the result to
per-class candidate lists via thresholding and greedy NMS.

Attribute layout along the last tensor axis::

    [x, y, w, h, actionness, class_0..C-1, progression_0..C-1, rate_0..C-1]
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, softmax

from .geometry import Box, box_iou

ATTR_X, ATTR_Y, ATTR_W, ATTR_H, ATTR_ACT = range(5)


def attr_width(n_classes: int) -> int:
    return 5 + 3 * n_classes


@dataclass(frozen=True)
class AnchorSet:
    """Anchor box priors, (width, height) pairs in grid-cell units."""

    sizes: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.sizes:
            raise ValueError("anchor set must contain at least one anchor")
        for w, h in self.sizes:
            if w <= 0 or h <= 0:
                raise ValueError(f"anchor sizes must be positive, got ({w}, {h})")

    def __len__(self) -> int:
        return len(self.sizes)


@dataclass(frozen=True)
class RawGrid:
    """One frame's raw (pre-activation) detection tensor.

    ``values`` is indexed ``[cell_y][cell_x][anchor][attribute]``.
    """

    s_cells: int
    n_anchors: int
    n_classes: int
    values: np.ndarray

    def __post_init__(self):
        if self.s_cells < 1 or self.n_anchors < 1 or self.n_classes < 1:
            raise ValueError("grid dimensions must all be >= 1")
        expected = (self.s_cells, self.s_cells, self.n_anchors, attr_width(self.n_classes))
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.size != np.prod(expected):
            raise ValueError(f"grid values have {arr.size} elements, expected {np.prod(expected)} for shape {expected}")
        object.__setattr__(self, "values", arr.reshape(expected))


@dataclass(frozen=True)
class BoxAttributes:
    """Activated attributes of one decoded box.

    ``offsets`` holds the activated center offsets (x, y in [0, 1], relative
    to the owning cell) and the raw width/height offsets (unbounded).
    ``class_scores`` sums to one; ``progression`` and ``rates`` are
    independent per-class probabilities.
    """

    actionness: float
    offsets: tuple[float, float, float, float]
    class_scores: tuple[float, ...]
    progression: tuple[float, ...]
    rates: tuple[float, ...]


@dataclass(frozen=True)
class DecodedBox:
    cell: tuple[int, int]  # (cell_x, cell_y)
    anchor: int
    attrs: BoxAttributes
    geometry: Box


@dataclass(frozen=True)
class CandidateBox:
    """A per-class scored detection ready for linking."""

    class_id: int
    geometry: Box
    confidence: float
    rate: float


def decode_grid(raw: RawGrid, anchors: AnchorSet) -> list[DecodedBox]:
    """Activate a raw grid and decode every (cell, anchor) slot to a box.

    Pure function: identical inputs produce bit-identical outputs.  Geometry
    is clamped to the unit square; centers stay strictly inside it for any
    finite logits, so areas are always positive.
    """
    if len(anchors) != raw.n_anchors:
        raise ValueError(f"anchor set has {len(anchors)} entries, grid declares {raw.n_anchors}")
    s, b, c = raw.s_cells, raw.n_anchors, raw.n_classes
    v = raw.values

    sig_xy = expit(v[..., ATTR_X : ATTR_Y + 1])
    act = expit(v[..., ATTR_ACT])
    cls = softmax(v[..., 5 : 5 + c], axis=-1)
    prog = expit(v[..., 5 + c : 5 + 2 * c])
    rate = expit(v[..., 5 + 2 * c : 5 + 3 * c])

    prior = np.asarray(anchors.sizes, dtype=np.float64)  # (B, 2)
    size = prior * np.exp(v[..., ATTR_W : ATTR_H + 1]) / s  # (S, S, B, 2)

    grid_x = np.arange(s, dtype=np.float64)[None, :, None]
    grid_y = np.arange(s, dtype=np.float64)[:, None, None]
    center_x = (grid_x + sig_xy[..., 0]) / s
    center_y = (grid_y + sig_xy[..., 1]) / s

    x_min = np.clip(center_x - size[..., 0] / 2.0, 0.0, 1.0)
    x_max = np.clip(center_x + size[..., 0] / 2.0, 0.0, 1.0)
    y_min = np.clip(center_y - size[..., 1] / 2.0, 0.0, 1.0)
    y_max = np.clip(center_y + size[..., 1] / 2.0, 0.0, 1.0)

    out = []
    for cy in range(s):
        for cx in range(s):
            for j in range(b):
                attrs = BoxAttributes(
                    actionness=float(act[cy, cx, j]),
                    offsets=(
                        float(sig_xy[cy, cx, j, 0]),
                        float(sig_xy[cy, cx, j, 1]),
                        float(v[cy, cx, j, ATTR_W]),
                        float(v[cy, cx, j, ATTR_H]),
                    ),
                    class_scores=tuple(float(x) for x in cls[cy, cx, j]),
                    progression=tuple(float(x) for x in prog[cy, cx, j]),
                    rates=tuple(float(x) for x in rate[cy, cx, j]),
                )
                geometry = (
                    float(x_min[cy, cx, j]),
                    float(y_min[cy, cx, j]),
                    float(x_max[cy, cx, j]),
                    float(y_max[cy, cx, j]),
                )
                out.append(DecodedBox(cell=(cx, cy), anchor=j, attrs=attrs, geometry=geometry))
    return out


def confidence(attrs: BoxAttributes, class_id: int) -> float:
    """Composite per-class confidence: actionness * class score * progression."""
    if not 0 <= class_id < len(attrs.class_scores):
        raise IndexError(f"class_id {class_id} out of range")
    return attrs.actionness * attrs.class_scores[class_id] * attrs.progression[class_id]


def nms_boxes(candidates: list[CandidateBox], nms_iou: float) -> list[CandidateBox]:
    """Greedy NMS on one class's candidates; returns survivors sorted by
    descending confidence.  A box is suppressed when its IoU with an already
    kept box exceeds ``nms_iou``.  Ties in confidence keep input order.
    """
    ordered = sorted(candidates, key=lambda cb: -cb.confidence)
    kept: list[CandidateBox] = []
    for cand in ordered:
        if all(box_iou(cand.geometry, k.geometry) <= nms_iou for k in kept):
            kept.append(cand)
    return kept


def filter_and_nms(
    decoded: list[DecodedBox],
    score_threshold: float = 1e-3,
    nms_iou: float = 0.45,
) -> dict[int, list[CandidateBox]]:
    """Reduce decoded boxes to per-class candidate lists.

    Every class is handled independently: one decoded box can survive as a
    candidate for several classes, each carrying that class's confidence and
    progress rate.  Boxes with confidence <= ``score_threshold`` are dropped
    before NMS.
    """
    if not 0.0 <= score_threshold < 1.0:
        raise ValueError("score_threshold must lie in [0, 1)")
    if not 0.0 < nms_iou < 1.0:
        raise ValueError("nms_iou must lie in (0, 1)")
    n_classes = len(decoded[0].attrs.class_scores) if decoded else 0
    per_class: dict[int, list[CandidateBox]] = {}
    for class_id in range(n_classes):
        cands = []
        for db in decoded:
            score = confidence(db.attrs, class_id)
            if score > score_threshold:
                cands.append(
                    CandidateBox(
                        class_id=class_id,
                        geometry=db.geometry,
                        confidence=score,
                        rate=db.attrs.rates[class_id],
                    )
                )
        per_class[class_id] = nms_boxes(cands, nms_iou)
    return per_class
