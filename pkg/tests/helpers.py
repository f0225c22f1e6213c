"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np

from tubestream.decode import CandidateBox
from tubestream.linker import LinkerConfig
from tubestream.tubes import DetectionStream


def random_box(rng) -> tuple[float, float, float, float]:
    cx, cy = rng.uniform(0.1, 0.9, 2)
    w, h = rng.uniform(0.05, 0.5, 2)
    return (
        float(max(0.0, cx - w / 2)),
        float(max(0.0, cy - h / 2)),
        float(min(1.0, cx + w / 2)),
        float(min(1.0, cy + h / 2)),
    )


def random_stream(seed: int, max_frames: int = 30, max_boxes: int = 5) -> tuple[DetectionStream, int, LinkerConfig]:
    """A random detection stream plus a matching random linker config."""
    rng = np.random.default_rng(seed)
    n_frames = int(rng.integers(2, max_frames + 1))
    n_classes = int(rng.integers(1, 4))
    stream = DetectionStream(video_id=f"v{seed}", frames={t: [] for t in range(1, n_frames + 1)})
    for t in range(1, n_frames + 1):
        for _ in range(int(rng.integers(0, max_boxes + 1))):
            stream.add(
                t,
                CandidateBox(
                    int(rng.integers(0, n_classes)),
                    random_box(rng),
                    float(rng.uniform(0.0, 1.0)),
                    float(rng.uniform(0.0, 1.0)),
                ),
            )
    config = LinkerConfig(
        iou_gate=0.3,
        window=int(rng.integers(2, 7)),
        max_tubes=int(rng.choice([1, 2, 10])),
        alphas=float(rng.choice([0.0, 0.3, 0.7, 1.0])),
        score_floor=1e-3,
    )
    return stream, n_classes, config


def chain_frames(n_frames: int, rates, scores=None, box=(0.2, 0.2, 0.6, 0.6), class_id: int = 0):
    """A single-box-per-frame chain with given rates (and optional scores)."""
    if scores is None:
        scores = [0.5] * n_frames
    return [
        (t, [CandidateBox(class_id, box, float(scores[t - 1]), float(rates[t - 1]))])
        for t in range(1, n_frames + 1)
    ]
