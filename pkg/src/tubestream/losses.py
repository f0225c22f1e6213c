"""Training objective for the progress-aware grid detector, as pure numeric kernels.

The loss compares an *activated* attribute grid (same layout the decoder
produces, see :mod:`tubestream.decode`) against a per-cell/per-anchor target
assignment.  Five squared-error terms are summed over every cell i and
anchor j:

* ``coord``  - box offsets, only at responsible (i, j) slots;
* ``conf``   - actionness pulled to 1 at responsible slots and to 0 at
  action-free slots, with separate weights;
* ``cls``    - per-class scores against a one-hot target at responsible slots;
* ``hp``     - progression pulled to 1 for the assigned class at responsible
  slots; pulled to 0 (unit weight) for every class at action-free slots whose
  predicted actionness exceeds the mining gate ``theta`` - easy negatives are
  ignored;
* ``sp``     - progress rate against the tube-local completion fraction,
  for the assigned class at responsible slots.

Analytic gradients are provided with respect to every predicted attribute
(the mining gate is treated as a constant factor, which is its almost-
everywhere derivative), along with a central-finite-difference checker.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decode import ATTR_ACT, ATTR_H, ATTR_W, ATTR_X, AnchorSet, attr_width
from .geometry import shape_iou
from .tubes import GroundTruthTube


@dataclass(frozen=True)
class LossWeights:
    """Term weights and the progression negative-mining gate."""

    coord: float = 5.0
    act: float = 10.0
    noact: float = 5.0
    cls: float = 5.0
    progression: float = 5.0
    rate: float = 5.0
    neg_gate: float = 0.2  # theta: mine progression negatives only where actionness exceeds this

    def __post_init__(self):
        for name in ("coord", "act", "noact", "cls", "progression", "rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative")
        if not 0.0 <= self.neg_gate <= 1.0:
            raise ValueError("neg_gate must lie in [0, 1]")


@dataclass
class TargetAssignment:
    """Ground-truth values and indicator masks for one frame's grid.

    ``act_mask[iy, ix, j]`` marks the single responsible anchor of each action
    instance; ``noact_mask`` marks slots with no action at all (the two are
    mutually exclusive).  ``class_act_mask`` refines ``act_mask`` by class.
    Filled target values are meaningful only where the matching mask is set.
    """

    s_cells: int
    n_anchors: int
    n_classes: int
    act_mask: np.ndarray  # (S, S, B)
    noact_mask: np.ndarray  # (S, S, B)
    class_act_mask: np.ndarray  # (S, S, B, C)
    target_offsets: np.ndarray  # (S, S, B, 4) activated-space (x, y, w, h)
    target_class: np.ndarray  # (S, S, B, C) one-hot
    target_rate: np.ndarray  # (S, S, B, C) tube-local completion fraction


@dataclass(frozen=True)
class LossBreakdown:
    coord: float
    conf: float
    cls: float
    hp: float
    sp: float

    @property
    def total(self) -> float:
        return self.coord + self.conf + self.cls + self.hp + self.sp


def build_targets(
    gt: list[GroundTruthTube],
    frame: int,
    grid: tuple[int, int, int],
    anchors: AnchorSet,
) -> TargetAssignment:
    """Assign each action instance covering ``frame`` to its responsible slot.

    The owning cell is the one containing the box center; the responsible
    anchor maximizes the co-centered shape IoU with the box (ties go to the
    lowest anchor index).  The rate target for a tube of length L at its
    k-th covered frame (1-based) is k / L, so the last frame targets 1.
    Tubes not covering ``frame`` are ignored.  If two instances claim the
    same slot, the first one in the list wins.
    """
    s, b, c = grid
    if len(anchors) != b:
        raise ValueError(f"anchor set has {len(anchors)} entries, grid declares {b}")
    ta = TargetAssignment(
        s_cells=s,
        n_anchors=b,
        n_classes=c,
        act_mask=np.zeros((s, s, b)),
        noact_mask=np.ones((s, s, b)),
        class_act_mask=np.zeros((s, s, b, c)),
        target_offsets=np.zeros((s, s, b, 4)),
        target_class=np.zeros((s, s, b, c)),
        target_rate=np.zeros((s, s, b, c)),
    )
    for tube in gt:
        if not tube.t_start <= frame <= tube.t_end:
            continue
        if not 0 <= tube.class_id < c:
            raise ValueError(f"tube class {tube.class_id} out of range for C={c}")
        x_min, y_min, x_max, y_max = tube.box_at(frame)
        if not (0.0 <= x_min < x_max <= 1.0 and 0.0 <= y_min < y_max <= 1.0):
            raise ValueError(f"ground-truth box {(x_min, y_min, x_max, y_max)} outside the unit square")
        w, h = x_max - x_min, y_max - y_min
        cx, cy = (x_min + x_max) / 2.0, (y_min + y_max) / 2.0
        ix = min(int(cx * s), s - 1)
        iy = min(int(cy * s), s - 1)
        ious = [shape_iou((w, h), (pw / s, ph / s)) for pw, ph in anchors.sizes]
        j = int(np.argmax(ious))  # argmax takes the first maximum: lowest anchor index on ties
        if ta.act_mask[iy, ix, j]:
            continue
        pw, ph = anchors.sizes[j]
        ta.act_mask[iy, ix, j] = 1.0
        ta.noact_mask[iy, ix, j] = 0.0
        ta.class_act_mask[iy, ix, j, tube.class_id] = 1.0
        ta.target_offsets[iy, ix, j] = (
            cx * s - ix,
            cy * s - iy,
            np.log(w * s / pw),
            np.log(h * s / ph),
        )
        ta.target_class[iy, ix, j, tube.class_id] = 1.0
        ta.target_rate[iy, ix, j, tube.class_id] = (frame - tube.t_start + 1) / tube.length
    return ta


def _split(pred: np.ndarray, c: int):
    xywh = pred[..., ATTR_X : ATTR_H + 1]
    act = pred[..., ATTR_ACT]
    cls = pred[..., 5 : 5 + c]
    prog = pred[..., 5 + c : 5 + 2 * c]
    rate = pred[..., 5 + 2 * c : 5 + 3 * c]
    return xywh, act, cls, prog, rate


def loss_terms(pred: np.ndarray, target: TargetAssignment, weights: LossWeights) -> LossBreakdown:
    """Evaluate every loss term over the grid; ``pred`` is the activated
    attribute tensor of shape (S, S, B, 5 + 3C)."""
    s, b, c = target.s_cells, target.n_anchors, target.n_classes
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != (s, s, b, attr_width(c)):
        raise ValueError(f"prediction shape {pred.shape} does not match target grid ({s}, {s}, {b}, {attr_width(c)})")
    xywh, act, cls, prog, rate = _split(pred, c)
    pos, neg = target.act_mask, target.noact_mask
    gate = neg * (act > weights.neg_gate)

    coord = weights.coord * float(np.sum(pos[..., None] * (xywh - target.target_offsets) ** 2))
    conf = weights.act * float(np.sum(pos * (act - 1.0) ** 2)) + weights.noact * float(np.sum(neg * act**2))
    cls_l = weights.cls * float(np.sum(pos[..., None] * (cls - target.target_class) ** 2))
    hp = weights.progression * float(np.sum(target.class_act_mask * (prog - 1.0) ** 2)) + float(
        np.sum(gate[..., None] * prog**2)
    )
    sp = weights.rate * float(np.sum(target.class_act_mask * (rate - target.target_rate) ** 2))
    return LossBreakdown(coord=coord, conf=conf, cls=cls_l, hp=hp, sp=sp)


def loss_gradient(pred: np.ndarray, target: TargetAssignment, weights: LossWeights) -> np.ndarray:
    """Analytic gradient of the total loss with respect to every predicted attribute."""
    s, b, c = target.s_cells, target.n_anchors, target.n_classes
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != (s, s, b, attr_width(c)):
        raise ValueError(f"prediction shape {pred.shape} does not match target grid ({s}, {s}, {b}, {attr_width(c)})")
    xywh, act, cls, prog, rate = _split(pred, c)
    pos, neg = target.act_mask, target.noact_mask
    gate = neg * (act > weights.neg_gate)

    grad = np.zeros_like(pred)
    grad[..., ATTR_X : ATTR_H + 1] = 2.0 * weights.coord * pos[..., None] * (xywh - target.target_offsets)
    grad[..., ATTR_ACT] = 2.0 * weights.act * pos * (act - 1.0) + 2.0 * weights.noact * neg * act
    grad[..., 5 : 5 + c] = 2.0 * weights.cls * pos[..., None] * (cls - target.target_class)
    grad[..., 5 + c : 5 + 2 * c] = (
        2.0 * weights.progression * target.class_act_mask * (prog - 1.0) + 2.0 * gate[..., None] * prog
    )
    grad[..., 5 + 2 * c : 5 + 3 * c] = 2.0 * weights.rate * target.class_act_mask * (rate - target.target_rate)
    return grad


def check_gradients(
    pred: np.ndarray,
    target: TargetAssignment,
    weights: LossWeights,
    eps: float = 1e-5,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Relative error uses ``|a - b| / max(|a|, |b|, 1e-8)`` per component.
    """
    if not 0.0 < eps < 1e-2:
        raise ValueError("eps must lie in (0, 1e-2)")
    pred = np.asarray(pred, dtype=np.float64).copy()
    analytic = loss_gradient(pred, target, weights)
    worst = 0.0
    flat = pred.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        hi = loss_terms(pred, target, weights).total
        flat[k] = orig - eps
        lo = loss_terms(pred, target, weights).total
        flat[k] = orig
        fd = (hi - lo) / (2.0 * eps)
        a = analytic.reshape(-1)[k]
        err = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
        worst = max(worst, err)
    return worst


def random_check_case(
    seed: int,
    s_cells: int = 3,
    n_anchors: int = 2,
    n_classes: int = 2,
) -> tuple[np.ndarray, TargetAssignment, LossWeights]:
    """Seeded random (prediction, target, weights) triple for gradient checks.

    Targets come from 0-3 random tubes pushed through :func:`build_targets`
    so positives, mined negatives, and ignored negatives all occur.
    """
    rng = np.random.default_rng(seed)
    anchors = AnchorSet(tuple((float(w), float(h)) for w, h in rng.uniform(0.5, 3.0, size=(n_anchors, 2))))
    tubes = []
    for _ in range(int(rng.integers(0, 4))):
        cx, cy = rng.uniform(0.2, 0.8, size=2)
        w, h = rng.uniform(0.05, 0.35, size=2)
        box = (
            float(max(0.0, cx - w / 2)),
            float(max(0.0, cy - h / 2)),
            float(min(1.0, cx + w / 2)),
            float(min(1.0, cy + h / 2)),
        )
        length = int(rng.integers(1, 9))
        tubes.append(
            GroundTruthTube(
                video_id="check",
                class_id=int(rng.integers(0, n_classes)),
                t_start=1,
                t_end=length,
                boxes=(box,) * length,
            )
        )
    frame = 1
    target = build_targets(tubes, frame, (s_cells, n_anchors, n_classes), anchors)

    width = attr_width(n_classes)
    pred = rng.uniform(0.0, 1.0, size=(s_cells, s_cells, n_anchors, width))
    pred[..., ATTR_W] = rng.normal(0.0, 1.0, size=pred.shape[:3])
    pred[..., ATTR_H] = rng.normal(0.0, 1.0, size=pred.shape[:3])
    return pred, target, LossWeights()
