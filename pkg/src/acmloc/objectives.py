"""Training objectives.

Three multiple-instance classification losses (one per attention branch,
each with its own top-k pooling), an attention-guide term tying instance
attention to the snippet-level action probability of the instance-weighted
activations, a feature-norm separation hinge ordering the pooled branch
features, and a sparsity term on the action-related attention mass.

All functions accept per-video inputs ([T, ...]) or batches ([B, T, ...]);
scalar losses are averaged over the batch dimension.  Top-k selections
break ties by lower time index (stable descending sort) so gradients and
logs are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .core import HyperParams, ValidationError, VideoLabel, topk_count
from .network import BranchActivations


@dataclass(frozen=True)
class AblationFlags:
    """Switches enabling individual loss terms; the instance loss is always on."""

    cls_con: bool = True
    cls_bak: bool = True
    guide: bool = True
    feat: bool = True
    sparse: bool = True


@dataclass
class LossBreakdown:
    """Per-term loss values plus the weighted total (0-dim tensors)."""

    cls_ins: torch.Tensor
    cls_con: torch.Tensor
    cls_bak: torch.Tensor
    guide: torch.Tensor
    feat: torch.Tensor
    sparse: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {
            "cls_ins": float(self.cls_ins),
            "cls_con": float(self.cls_con),
            "cls_bak": float(self.cls_bak),
            "guide": float(self.guide),
            "feat": float(self.feat),
            "sparse": float(self.sparse),
            "total": float(self.total),
        }


def branch_labels(label: VideoLabel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Video-level target distributions for the three branches.

    Instance: present classes only; context: present classes plus the
    background slot; background: background slot only.  Each indicator
    vector is normalized to sum to one.
    """
    if not label.class_ids:
        raise ValidationError("video label must name at least one action class")
    size = label.num_classes + 1
    y_ins = np.zeros(size)
    y_con = np.zeros(size)
    y_bak = np.zeros(size)
    for class_id in label.class_ids:
        y_ins[class_id] = 1.0
        y_con[class_id] = 1.0
    y_con[-1] = 1.0
    y_bak[-1] = 1.0
    return y_ins / y_ins.sum(), y_con / y_con.sum(), y_bak


@dataclass
class BranchLabels:
    """Stacked per-branch target distributions for a batch of videos."""

    y_ins: torch.Tensor
    y_con: torch.Tensor
    y_bak: torch.Tensor

    @classmethod
    def from_labels(
        cls, labels: list[VideoLabel], dtype: torch.dtype = torch.float32
    ) -> "BranchLabels":
        triples = [branch_labels(label) for label in labels]
        stack = lambda i: torch.as_tensor(np.stack([t[i] for t in triples]), dtype=dtype)
        return cls(stack(0), stack(1), stack(2))

    @classmethod
    def from_label(cls, label: VideoLabel, dtype: torch.dtype = torch.float32) -> "BranchLabels":
        y_ins, y_con, y_bak = branch_labels(label)
        return cls(
            torch.as_tensor(y_ins, dtype=dtype),
            torch.as_tensor(y_con, dtype=dtype),
            torch.as_tensor(y_bak, dtype=dtype),
        )

    def select(self, indices) -> "BranchLabels":
        return BranchLabels(self.y_ins[indices], self.y_con[indices], self.y_bak[indices])


def topk_aggregate(cas: torch.Tensor, k: int) -> torch.Tensor:
    """Mean of the k largest entries of every class column, along time."""
    num_snippets = cas.shape[-2]
    if not 1 <= k <= num_snippets:
        raise ValidationError(f"k must lie in [1, {num_snippets}], got {k}")
    ordered = torch.sort(cas, dim=-2, descending=True, stable=True).values
    return ordered[..., :k, :].mean(dim=-2)


def video_probs(scores: torch.Tensor) -> torch.Tensor:
    """Softmax of the aggregated class scores over the C+1 classes."""
    return torch.softmax(scores, dim=-1)


def branch_cls_loss(cas: torch.Tensor, k: int, y_branch: torch.Tensor) -> torch.Tensor:
    """Cross-entropy of the top-k video-level prediction against a branch label."""
    log_probs = torch.log_softmax(topk_aggregate(cas, k), dim=-1)
    return -(y_branch * log_probs).sum(dim=-1).mean()


def guide_loss(cas_ins: torch.Tensor, att_ins: torch.Tensor) -> torch.Tensor:
    """Mean deviation of instance attention from snippet-level actionness.

    Actionness is one minus the background probability of the softmaxed
    instance-weighted activation row; the result lies in [0, 1].
    """
    snippet_probs = torch.softmax(cas_ins, dim=-1)
    actionness = 1.0 - snippet_probs[..., -1]
    return (actionness - att_ins).abs().mean()


def pool_branch_feature(
    embedded: torch.Tensor, att_column: torch.Tensor, k: int
) -> torch.Tensor:
    """Mean of the embedded rows at the k highest attention positions."""
    num_snippets = embedded.shape[-2]
    if not 1 <= k <= num_snippets:
        raise ValidationError(f"k must lie in [1, {num_snippets}], got {k}")
    order = torch.sort(att_column, dim=-1, descending=True, stable=True).indices[..., :k]
    gathered = torch.gather(
        embedded, -2, order.unsqueeze(-1).expand(*order.shape, embedded.shape[-1])
    )
    return gathered.mean(dim=-2)


def feature_separation_loss(
    x_ins: torch.Tensor, x_con: torch.Tensor, x_bak: torch.Tensor, margin: float
) -> torch.Tensor:
    """Squared sum of the hinge terms ordering the pooled feature norms.

    Wants ||x_ins|| to exceed ||x_con|| by the margin, ||x_con|| to exceed
    ||x_bak|| likewise, and ||x_bak|| itself to vanish.
    """
    n_ins = torch.linalg.vector_norm(x_ins, dim=-1)
    n_con = torch.linalg.vector_norm(x_con, dim=-1)
    n_bak = torch.linalg.vector_norm(x_bak, dim=-1)
    h_ins = torch.clamp(margin - n_ins + n_con, min=0.0)
    h_con = torch.clamp(margin - n_con + n_bak, min=0.0)
    return ((h_ins + h_con + n_bak) ** 2).mean()


def sparsity_loss(att_ins: torch.Tensor, att_con: torch.Tensor) -> torch.Tensor:
    """Mean action-related attention mass: average of att_ins + att_con."""
    return (att_ins + att_con).mean()


def total_loss(
    acts: BranchActivations,
    labels: BranchLabels,
    hp: HyperParams,
    flags: AblationFlags = AblationFlags(),
) -> LossBreakdown:
    """All loss terms with branch-specific top-k sizes, and their weighted sum.

    Disabled terms are recorded as zero so the identity
    total = cls terms + weighted extras always holds.
    """
    num_snippets = acts.cas.shape[-2]
    zero = torch.zeros((), dtype=acts.cas.dtype, device=acts.cas.device)
    k_ins = topk_count(num_snippets, hp.r_ins)
    k_con = topk_count(num_snippets, hp.r_con)
    k_bak = topk_count(num_snippets, hp.r_bak)

    cls_ins = branch_cls_loss(acts.cas_ins, k_ins, labels.y_ins)
    cls_con = branch_cls_loss(acts.cas_con, k_con, labels.y_con) if flags.cls_con else zero
    cls_bak = branch_cls_loss(acts.cas_bak, k_bak, labels.y_bak) if flags.cls_bak else zero

    guide = guide_loss(acts.cas_ins, acts.att_ins) if flags.guide else zero
    if flags.feat:
        x_ins = pool_branch_feature(acts.embedded, acts.att_ins, k_ins)
        x_con = pool_branch_feature(acts.embedded, acts.att_con, k_con)
        x_bak = pool_branch_feature(acts.embedded, acts.att_bak, k_bak)
        feat = feature_separation_loss(x_ins, x_con, x_bak, hp.feat_margin)
    else:
        feat = zero
    sparse = sparsity_loss(acts.att_ins, acts.att_con) if flags.sparse else zero

    total = (
        cls_ins + cls_con + cls_bak
        + hp.guide_weight * guide
        + hp.feat_weight * feat
        + hp.sparse_weight * sparse
    )
    return LossBreakdown(cls_ins, cls_con, cls_bak, guide, feat, sparse, total)
