"""Label-free uncertainty scoring for active data selection.

A prediction's uncertainty is the sum of its (unweighted) Manhattan
alignment and ceiling-floor consistency losses, both computable without
any ground truth. When heights are not annotated, the ceiling height is
inferred from the prediction itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .layout import LayoutBoundaries, LayoutHeights, infer_ceiling_height
from .losses import ceil_floor, default_manhattan_window, manhattan


@dataclass
class UncertaintyScore:
    """Per-scene label-free uncertainty: manhattan + ceil_floor."""

    scene_id: str
    manhattan: float
    ceil_floor: float

    @property
    def score(self) -> float:
        return self.manhattan + self.ceil_floor

    def to_dict(self) -> dict:
        return {"scene": self.scene_id, "score": self.score,
                "terms": {"manhattan": self.manhattan,
                          "ceil_floor": self.ceil_floor}}


def score_scene(b: LayoutBoundaries, heights: LayoutHeights | None = None,
                scene_id: str = "", window: int | None = None) -> UncertaintyScore:
    """Uncertainty of one prediction; no ground-truth fields are consumed."""
    b = b.detached()
    if heights is None:
        heights = LayoutHeights(-1.0, float(infer_ceiling_height(b)))
    if window is None:
        window = default_manhattan_window(b.width)
    m = float(ad.value(manhattan(b, heights, window)))
    cf = float(ad.value(ceil_floor(b, heights)))
    return UncertaintyScore(scene_id, m, cf)


def rank(scores: list) -> list:
    """Scene ids by descending score; ties break by ascending scene id."""
    if not scores:
        raise ValueError("cannot rank an empty score list")
    ordered = sorted(scores, key=lambda s: (-s.score, s.scene_id))
    return [s.scene_id for s in ordered]
