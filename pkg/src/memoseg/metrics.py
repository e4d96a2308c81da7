"""Binary segmentation metrics from the four pixel counters.

All five values derive from TP/FP/TN/FN alone.  A class absent from both
prediction and ground truth scores IoU 1 (vacuous agreement); per-class
pixel accuracy averages only over classes the ground truth actually
contains, so single-class images stay well defined.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatchError, EmptyInputError
from .grids import BinaryMask


@dataclass(frozen=True)
class MaskMetrics:
    iou_fg: float
    iou_bg: float
    miou: float
    mpa: float
    acc: float

    def as_dict(self) -> dict:
        return {
            "iou_fg": self.iou_fg,
            "iou_bg": self.iou_bg,
            "miou": self.miou,
            "mpa": self.mpa,
            "acc": self.acc,
        }


def compute_metrics(pred: BinaryMask, gt: BinaryMask) -> MaskMetrics:
    if pred.data.shape != gt.data.shape:
        raise DimMismatchError(
            f"prediction {pred.data.shape} vs ground truth {gt.data.shape}"
        )
    total = pred.data.size
    if total == 0:
        raise EmptyInputError("cannot score empty masks")

    p, g = pred.data, gt.data
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = total - tp - fp - fn

    fg_union = tp + fp + fn
    bg_union = tn + fp + fn
    iou_fg = tp / fg_union if fg_union else 1.0
    iou_bg = tn / bg_union if bg_union else 1.0

    present = []
    if tp + fn:  # FG pixels exist in gt
        present.append(tp / (tp + fn))
    if tn + fp:  # BG pixels exist in gt
        present.append(tn / (tn + fp))
    mpa = sum(present) / len(present)

    return MaskMetrics(
        iou_fg=iou_fg,
        iou_bg=iou_bg,
        miou=(iou_fg + iou_bg) / 2.0,
        mpa=mpa,
        acc=(tp + tn) / total,
    )
