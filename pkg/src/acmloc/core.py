"""Core domain types and the interval arithmetic shared by every module.

Times are seconds on the real axis.  Action categories are integer class
ids indexing a fixed vocabulary of ``num_classes`` entries; network outputs
append one extra background slot at index ``num_classes``.
"""

from __future__ import annotations

from dataclasses import dataclass


class ValidationError(ValueError):
    """An input violated a documented precondition."""


@dataclass(frozen=True)
class ActionInstance:
    """A ground-truth action occurrence inside one video."""

    start_s: float
    end_s: float
    class_id: int

    def __post_init__(self) -> None:
        if self.start_s < 0:
            raise ValidationError(f"instance start must be >= 0, got {self.start_s}")
        if self.end_s <= self.start_s:
            raise ValidationError(
                f"instance must have end > start, got [{self.start_s}, {self.end_s}]"
            )
        if self.class_id < 0:
            raise ValidationError(f"class_id must be >= 0, got {self.class_id}")


@dataclass(frozen=True)
class VideoLabel:
    """Video-level category label: the set of action classes present."""

    class_ids: frozenset[int]
    num_classes: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "class_ids", frozenset(self.class_ids))
        if self.num_classes < 1:
            raise ValidationError(f"num_classes must be >= 1, got {self.num_classes}")
        bad = [c for c in self.class_ids if not 0 <= c < self.num_classes]
        if bad:
            raise ValidationError(
                f"class ids {sorted(bad)} outside [0, {self.num_classes})"
            )


@dataclass(frozen=True)
class Proposal:
    """A detection candidate: a scored temporal segment of one class."""

    start_s: float
    end_s: float
    class_id: int
    confidence: float

    def __post_init__(self) -> None:
        if self.end_s <= self.start_s:
            raise ValidationError(
                f"proposal must have end > start, got [{self.start_s}, {self.end_s}]"
            )

    @property
    def segment(self) -> tuple[float, float]:
        return (self.start_s, self.end_s)


@dataclass(frozen=True)
class HyperParams:
    """All method hyperparameters, bundled so configs stay one object.

    ``r_ins``/``r_con``/``r_bak`` are the per-branch top-k divisors
    (k = max(1, T // r)).  ``guide_weight``/``feat_weight``/``sparse_weight``
    weight the extra losses on top of the three classification terms.
    ``fusion_alpha`` mixes instance attention into the class activations at
    inference time, ``cls_threshold`` gates which classes a test video is
    assigned, and ``proposal_thresholds`` is the grid applied to the fused
    per-class signal during segment extraction.
    """

    num_snippets: int
    num_classes: int
    r_ins: int = 8
    r_con: int = 3
    r_bak: int = 3
    guide_weight: float = 2e-3
    feat_weight: float = 5e-5
    sparse_weight: float = 2e-4
    feat_margin: float = 50.0
    fusion_alpha: float = 0.0
    cls_threshold: float = 0.2
    proposal_thresholds: tuple[float, ...] = (0.15, 0.20, 0.25)
    nms_iou: float = 0.5
    tiou_grid: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "proposal_thresholds", tuple(self.proposal_thresholds)
        )
        object.__setattr__(self, "tiou_grid", tuple(self.tiou_grid))
        if self.num_snippets < 1:
            raise ValidationError(f"num_snippets must be >= 1, got {self.num_snippets}")
        if self.num_classes < 1:
            raise ValidationError(f"num_classes must be >= 1, got {self.num_classes}")
        for name in ("r_ins", "r_con", "r_bak"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("guide_weight", "feat_weight", "sparse_weight"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.feat_margin <= 0:
            raise ValidationError(f"feat_margin must be > 0, got {self.feat_margin}")
        if not 0.0 <= self.fusion_alpha <= 1.0:
            raise ValidationError(f"fusion_alpha must lie in [0, 1], got {self.fusion_alpha}")
        if not 0.0 < self.cls_threshold < 1.0:
            raise ValidationError(f"cls_threshold must lie in (0, 1), got {self.cls_threshold}")
        if not self.proposal_thresholds:
            raise ValidationError("proposal_thresholds must be non-empty")
        if list(self.proposal_thresholds) != sorted(self.proposal_thresholds):
            raise ValidationError("proposal_thresholds must be ascending")
        if not 0.0 < self.nms_iou < 1.0:
            raise ValidationError(f"nms_iou must lie in (0, 1), got {self.nms_iou}")
        if not self.tiou_grid or list(self.tiou_grid) != sorted(self.tiou_grid):
            raise ValidationError("tiou_grid must be non-empty and ascending")


def temporal_iou(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Intersection over union of two time intervals, in [0, 1].

    Both intervals must be non-degenerate (end > start); a zero-length
    union can therefore never occur.
    """
    a_start, a_end = a
    b_start, b_end = b
    if a_end <= a_start:
        raise ValidationError(f"degenerate segment [{a_start}, {a_end}]")
    if b_end <= b_start:
        raise ValidationError(f"degenerate segment [{b_start}, {b_end}]")
    inter = max(0.0, min(a_end, b_end) - max(a_start, b_start))
    union = (a_end - a_start) + (b_end - b_start) - inter
    return inter / union


def topk_count(num_snippets: int, divisor: int) -> int:
    """Number of snippets pooled by a top-k branch: max(1, T // r)."""
    if num_snippets < 1:
        raise ValidationError(f"num_snippets must be >= 1, got {num_snippets}")
    if divisor < 1:
        raise ValidationError(f"divisor must be >= 1, got {divisor}")
    return max(1, num_snippets // divisor)
