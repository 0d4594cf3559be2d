"""The trainable forward pass.

Three stages over a snippet feature sequence of shape [T, F] (or batched
[B, T, F]):

* embedding: temporal convolution plus ReLU, preserving T and F,
* classification: a small temporal conv stack producing per-snippet logits
  over the action classes plus one trailing background column,
* attention: a width-1 convolution to 3 channels with a per-snippet softmax
  over the instance / context / background branches.

Scaling the raw activation sequence by each attention column yields the
three branch-weighted activation sequences; because attention rows sum to
one the three weighted sequences sum back to the raw one.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .core import ValidationError

CHECKPOINT_MAGIC = b"ACMC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    """Architecture hyperparameters; shapes follow the dataset dimensions."""

    feature_dim: int          # input channels F (both streams concatenated)
    num_classes: int          # action classes; logits gain one background column
    hidden_dim: int | None = None  # classifier hidden width, defaults to feature_dim
    embed_kernel: int = 3
    cls_kernel: int = 3
    dropout: float = 0.5
    init_seed: int = 0

    def __post_init__(self) -> None:
        if self.feature_dim < 1 or self.num_classes < 1:
            raise ValidationError("feature_dim and num_classes must be >= 1")
        if self.embed_kernel % 2 == 0 or self.cls_kernel % 2 == 0:
            raise ValidationError("kernel widths must be odd to preserve length")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def resolved_hidden(self) -> int:
        return self.hidden_dim if self.hidden_dim is not None else self.feature_dim


@dataclass
class BranchActivations:
    """All forward-pass outputs for one video (or a batch of them).

    ``cas`` holds the raw per-snippet logits [..., T, C+1]; ``attention``
    the [..., T, 3] branch weights (rows on the simplex); ``cas_ins`` /
    ``cas_con`` / ``cas_bak`` are ``cas`` scaled row-wise by the matching
    attention column.
    """

    embedded: torch.Tensor
    cas: torch.Tensor
    attention: torch.Tensor
    cas_ins: torch.Tensor
    cas_con: torch.Tensor
    cas_bak: torch.Tensor

    @property
    def att_ins(self) -> torch.Tensor:
        return self.attention[..., 0]

    @property
    def att_con(self) -> torch.Tensor:
        return self.attention[..., 1]

    @property
    def att_bak(self) -> torch.Tensor:
        return self.attention[..., 2]


def weighted_cas(
    cas: torch.Tensor, attention: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Scale each logit row by the instance / context / background weights."""
    if cas.shape[:-1] != attention.shape[:-1] or attention.shape[-1] != 3:
        raise ValidationError(
            f"incompatible shapes: cas {tuple(cas.shape)}, attention {tuple(attention.shape)}"
        )
    return (
        cas * attention[..., 0:1],
        cas * attention[..., 1:2],
        cas * attention[..., 2:3],
    )


def branch_activations(
    embedded: torch.Tensor, cas: torch.Tensor, attention: torch.Tensor
) -> BranchActivations:
    cas_ins, cas_con, cas_bak = weighted_cas(cas, attention)
    return BranchActivations(embedded, cas, attention, cas_ins, cas_con, cas_bak)


class ActionContextNet(nn.Module):
    """Embedding, snippet classification, and three-way branch attention."""

    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        f, h, c = config.feature_dim, config.resolved_hidden, config.num_classes
        self.embed_conv = nn.Conv1d(f, f, config.embed_kernel, padding=config.embed_kernel // 2)
        self.cls_conv1 = nn.Conv1d(f, h, config.cls_kernel, padding=config.cls_kernel // 2)
        self.cls_conv2 = nn.Conv1d(h, c + 1, 1)
        self.att_conv = nn.Conv1d(f, 3, 1)
        self.cls_dropout = nn.Dropout(config.dropout)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        """Fan-in-scaled uniform weights, zero biases, pinned by init_seed."""
        generator = torch.Generator().manual_seed(self.config.init_seed)
        for conv in (self.embed_conv, self.cls_conv1, self.cls_conv2, self.att_conv):
            fan_in = conv.in_channels * conv.kernel_size[0]
            bound = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                conv.weight.uniform_(-bound, bound, generator=generator)
                conv.bias.zero_()

    def _check_input(self, tensor: torch.Tensor, expected_dim: int, what: str) -> torch.Tensor:
        if tensor.ndim not in (2, 3) or tensor.shape[-1] != expected_dim:
            raise ValidationError(
                f"{what} must be [T, {expected_dim}] or [B, T, {expected_dim}], "
                f"got {tuple(tensor.shape)}"
            )
        return tensor

    def _conv(self, layer: nn.Conv1d, tensor: torch.Tensor) -> torch.Tensor:
        # Conv1d wants [B, channels, T]; accept [T, F] or [B, T, F].
        squeeze = tensor.ndim == 2
        if squeeze:
            tensor = tensor.unsqueeze(0)
        out = layer(tensor.transpose(1, 2)).transpose(1, 2)
        return out.squeeze(0) if squeeze else out

    def embed(self, features: torch.Tensor) -> torch.Tensor:
        """Map raw snippet features to the task feature space (ReLU output)."""
        self._check_input(features, self.config.feature_dim, "features")
        return torch.relu(self._conv(self.embed_conv, features))

    def classify(self, embedded: torch.Tensor) -> torch.Tensor:
        """Per-snippet logits over the action classes plus background."""
        self._check_input(embedded, self.config.feature_dim, "embedded features")
        hidden = torch.relu(self._conv(self.cls_conv1, embedded))
        hidden = self.cls_dropout(hidden)
        return self._conv(self.cls_conv2, hidden)

    def attend(self, embedded: torch.Tensor) -> torch.Tensor:
        """Per-snippet softmax weights over instance, context, background."""
        self._check_input(embedded, self.config.feature_dim, "embedded features")
        return torch.softmax(self._conv(self.att_conv, embedded), dim=-1)

    def forward(self, features: torch.Tensor) -> BranchActivations:
        embedded = self.embed(features)
        cas = self.classify(embedded)
        attention = self.attend(embedded)
        return branch_activations(embedded, cas, attention)


# ---------------------------------------------------------------------------
# Checkpoint container
# ---------------------------------------------------------------------------
# Single binary file, little-endian:
#   magic ACMC | u32 version | u32 meta_len | meta (UTF-8 JSON)
#   | u32 n_arrays | per array: u32 name_len | name | u32 dtype_len | dtype
#   | u32 ndim | u32 dims... | raw bytes
# Array payloads are stored verbatim so parameters round-trip bit-exactly.

class CheckpointError(RuntimeError):
    """A checkpoint file is malformed or incompatible."""


def save_checkpoint(path: str | Path, model: ActionContextNet, step: int) -> None:
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "net": asdict(model.config),
        "step": int(step),
    }
    arrays = {name: param.detach().cpu().numpy() for name, param in model.state_dict().items()}
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name])
            if arr.dtype.byteorder == ">":
                arr = arr.astype(arr.dtype.newbyteorder("<"))
            name_b = name.encode("utf-8")
            dtype_b = arr.dtype.str.encode("ascii")
            fh.write(struct.pack("<I", len(name_b)) + name_b)
            fh.write(struct.pack("<I", len(dtype_b)) + dtype_b)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def _read_exact(fh, count: int, path) -> bytes:
    chunk = fh.read(count)
    if len(chunk) != count:
        raise CheckpointError(f"{path}: truncated checkpoint")
    return chunk


def load_checkpoint(path: str | Path) -> tuple[ActionContextNet, int]:
    """Rebuild the network and its training step count from a checkpoint."""
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        version, meta_len = struct.unpack("<II", _read_exact(fh, 8, path))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        meta = json.loads(_read_exact(fh, meta_len, path).decode("utf-8"))
        (n_arrays,) = struct.unpack("<I", _read_exact(fh, 4, path))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(n_arrays):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, path))
            name = _read_exact(fh, name_len, path).decode("utf-8")
            (dtype_len,) = struct.unpack("<I", _read_exact(fh, 4, path))
            dtype = np.dtype(_read_exact(fh, dtype_len, path).decode("ascii"))
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4, path))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, path))
            payload = _read_exact(fh, dtype.itemsize * int(np.prod(shape, dtype=np.int64)), path)
            arrays[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    try:
        config = NetConfig(**meta["net"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: bad architecture metadata: {exc}") from exc
    model = ActionContextNet(config)
    state = {name: torch.from_numpy(arr) for name, arr in arrays.items()}
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: parameter arrays do not fit the architecture: {exc}") from exc
    return model, int(meta["step"])
