"""Dataset ingestion, fixed-length resampling, and synthetic data generation.

File formats
------------
Features: one binary file per video (``<video_id>.acmf``), little-endian:

    magic ``ACMF`` | u32 version (=1) | u32 num_snippets | u32 feature_dim |
    num_snippets * feature_dim float32 values, row-major

The first half of each feature row is the appearance (RGB) stream, the
second half the motion (flow) stream.

Annotations: a single JSON document::

    {"class_names": ["<name>", ...],        # order defines class ids
     "videos": {"<video_id>": {
         "duration_s": float, "fps": float, "snippet_frames": int,
         "labels": ["<class name>", ...],
         "instances": [[start_s, end_s, "<class name>"], ...]}}}

``instances`` is optional and only consumed at evaluation time.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ActionInstance, ValidationError, VideoLabel

FEATURE_MAGIC = b"ACMF"
FEATURE_VERSION = 1
FEATURE_SUFFIX = ".acmf"


class DatasetLoadError(RuntimeError):
    """A dataset file is missing, malformed, or inconsistent."""


@dataclass(frozen=True)
class SnippetFeatureSequence:
    """Per-video matrix of snippet feature vectors, one row per snippet."""

    video_id: str
    features: np.ndarray  # [native_len, feature_dim] float32

    def __post_init__(self) -> None:
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValidationError(
                f"features must be a non-empty 2-d matrix, got shape {self.features.shape}"
            )
        if not np.isfinite(self.features).all():
            raise ValidationError(f"non-finite feature values in video '{self.video_id}'")

    @property
    def native_len(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class VideoRecord:
    """Video metadata: duration, snippet timing, label, optional ground truth."""

    video_id: str
    duration_s: float
    snippet_seconds: float
    label: VideoLabel
    instances: tuple[ActionInstance, ...] | None = None

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ValidationError(f"duration_s must be > 0, got {self.duration_s}")
        if self.snippet_seconds <= 0:
            raise ValidationError(f"snippet_seconds must be > 0, got {self.snippet_seconds}")
        if self.instances is not None:
            object.__setattr__(self, "instances", tuple(self.instances))
            for inst in self.instances:
                if inst.end_s > self.duration_s + 1e-9:
                    raise ValidationError(
                        f"instance [{inst.start_s}, {inst.end_s}] exceeds duration "
                        f"{self.duration_s} of video '{self.video_id}'"
                    )


# ---------------------------------------------------------------------------
# Feature binary format
# ---------------------------------------------------------------------------

def write_feature_file(path: str | Path, features: np.ndarray) -> None:
    """Write a snippet feature matrix in the binary feature format."""
    arr = np.ascontiguousarray(features, dtype="<f4")
    if arr.ndim != 2:
        raise ValidationError(f"features must be 2-d, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FEATURE_VERSION, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def read_feature_file(path: str | Path) -> np.ndarray:
    """Read a snippet feature matrix back from the binary feature format."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise DatasetLoadError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
        header = fh.read(12)
        if len(header) != 12:
            raise DatasetLoadError(f"{path}: truncated header")
        version, num_snippets, feature_dim = struct.unpack("<III", header)
        if version != FEATURE_VERSION:
            raise DatasetLoadError(f"{path}: unsupported version {version}")
        payload = fh.read(num_snippets * feature_dim * 4)
    arr = np.frombuffer(payload, dtype="<f4")
    if arr.size != num_snippets * feature_dim:
        raise DatasetLoadError(
            f"{path}: expected {num_snippets * feature_dim} values, got {arr.size}"
        )
    return arr.reshape(num_snippets, feature_dim).copy()


# ---------------------------------------------------------------------------
# Annotation JSON
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Annotations:
    """Parsed annotation file: class vocabulary plus raw per-video entries."""

    class_names: tuple[str, ...]
    videos: dict[str, dict]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


def read_annotations(path: str | Path) -> Annotations:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetLoadError(
            f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc
    if "class_names" not in doc or "videos" not in doc:
        raise DatasetLoadError(f"{path}: missing 'class_names' or 'videos' key")
    class_names = tuple(doc["class_names"])
    if len(set(class_names)) != len(class_names):
        raise DatasetLoadError(f"{path}: duplicate class names")
    return Annotations(class_names=class_names, videos=dict(doc["videos"]))


def _record_from_entry(video_id: str, entry: dict, class_names: tuple[str, ...]) -> VideoRecord:
    name_to_id = {name: i for i, name in enumerate(class_names)}
    try:
        duration_s = float(entry["duration_s"])
        fps = float(entry["fps"])
        snippet_frames = int(entry["snippet_frames"])
        label_names = entry["labels"]
    except KeyError as exc:
        raise DatasetLoadError(f"video '{video_id}': missing annotation key {exc}") from exc
    unknown = [n for n in label_names if n not in name_to_id]
    if unknown:
        raise DatasetLoadError(f"video '{video_id}': unknown class names {unknown}")
    label = VideoLabel(
        class_ids=frozenset(name_to_id[n] for n in label_names),
        num_classes=len(class_names),
    )
    instances = None
    if entry.get("instances") is not None:
        parsed = []
        for start_s, end_s, name in entry["instances"]:
            if name not in name_to_id:
                raise DatasetLoadError(f"video '{video_id}': unknown class name '{name}'")
            parsed.append(ActionInstance(float(start_s), float(end_s), name_to_id[name]))
        instances = tuple(parsed)
    return VideoRecord(
        video_id=video_id,
        duration_s=duration_s,
        snippet_seconds=snippet_frames / fps,
        label=label,
        instances=instances,
    )


def load_dataset(
    feature_dir: str | Path,
    annotation_file: str | Path,
    expected_dim: int | None = None,
) -> list[tuple[SnippetFeatureSequence, VideoRecord]]:
    """Load every annotated video together with its snippet features.

    Videos are returned sorted by id so repeated loads are identical.
    Raises :class:`DatasetLoadError` naming the offending video when a
    feature file is missing or its dimension disagrees with the rest of
    the dataset (or with ``expected_dim`` when given).
    """
    feature_dir = Path(feature_dir)
    annotations = read_annotations(annotation_file)
    pairs: list[tuple[SnippetFeatureSequence, VideoRecord]] = []
    seen_dim = expected_dim
    for video_id in sorted(annotations.videos):
        record = _record_from_entry(video_id, annotations.videos[video_id], annotations.class_names)
        feature_path = feature_dir / f"{video_id}{FEATURE_SUFFIX}"
        if not feature_path.exists():
            raise DatasetLoadError(
                f"feature file for video '{video_id}' not found at {feature_path}"
            )
        features = read_feature_file(feature_path)
        if seen_dim is None:
            seen_dim = features.shape[1]
        elif features.shape[1] != seen_dim:
            raise DatasetLoadError(
                f"video '{video_id}': feature dimension {features.shape[1]} "
                f"does not match expected {seen_dim}"
            )
        pairs.append((SnippetFeatureSequence(video_id, features), record))
    return pairs


# ---------------------------------------------------------------------------
# Fixed-length resampling and the grid-to-seconds coordinate map
# ---------------------------------------------------------------------------

def resample_to_length(features: np.ndarray, target_len: int, mode: str = "linear") -> np.ndarray:
    """Resample a [L x F] feature matrix to ``target_len`` rows along time.

    ``linear`` interpolates each column at ``target_len`` uniformly spaced
    positions spanning [0, L-1]; when L equals the target the input is
    returned unchanged (bit-exact).  ``nearest`` snaps each position to the
    closest source row instead.
    """
    if target_len < 1:
        raise ValidationError(f"target_len must be >= 1, got {target_len}")
    if features.ndim != 2 or features.shape[0] < 1:
        raise ValidationError(f"features must be a non-empty 2-d matrix, got {features.shape}")
    native_len = features.shape[0]
    if native_len == target_len:
        return features.copy()
    positions = np.linspace(0.0, native_len - 1, num=target_len)
    if mode == "nearest":
        idx = np.rint(positions).astype(int)
        return features[idx].copy()
    if mode != "linear":
        raise ValidationError(f"unknown resample mode '{mode}'")
    lo = np.floor(positions).astype(int)
    hi = np.minimum(lo + 1, native_len - 1)
    frac = (positions - lo)[:, None].astype(features.dtype)
    return (1 - frac) * features[lo] + frac * features[hi]


@dataclass(frozen=True)
class GridToSeconds:
    """Maps indices on the resampled grid back to seconds in the source video.

    Grid cell ``i`` of ``grid_len`` cells covers native snippets
    [i * L / grid_len, (i+1) * L / grid_len), so an index maps to
    ``i * L / grid_len * snippet_seconds``, clamped to the video extent.
    This inverts the uniform time re-span performed by the resampler.
    """

    grid_len: int
    native_len: int
    snippet_seconds: float
    duration_s: float

    def __call__(self, index: float) -> float:
        seconds = index * self.native_len * self.snippet_seconds / self.grid_len
        return min(max(seconds, 0.0), self.duration_s)

    def segment(self, start_idx: int, end_idx: int) -> tuple[float, float]:
        return self(start_idx), self(end_idx)


# ---------------------------------------------------------------------------
# Synthetic benchmark generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a desk-scale dataset with known snippet roles.

    Instance snippets are drawn around ``separation`` times a class-specific
    unit direction, the context flanks around half that offset, and
    background snippets around the origin, all with isotropic Gaussian noise
    of scale ``noise``.  A fixed seed pins every random draw.
    """

    num_videos: int
    num_classes: int
    feature_dim: int  # per-stream width D; feature rows have 2 * D entries
    native_len_range: tuple[int, int] = (60, 90)
    instances_per_video: tuple[int, int] = (1, 2)
    context_flank_range: tuple[int, int] = (4, 6)
    instance_len_range: tuple[int, int] = (8, 16)
    separation: float = 2.0
    noise: float = 0.5
    seed: int = 0
    fps: float = 25.0
    snippet_frames: int = 16

    def __post_init__(self) -> None:
        if self.num_videos < 1 or self.num_classes < 1 or self.feature_dim < 1:
            raise ValidationError("num_videos, num_classes, feature_dim must be >= 1")
        if self.separation <= 0:
            raise ValidationError(f"separation must be > 0, got {self.separation}")
        if self.noise < 0:
            raise ValidationError(f"noise must be >= 0, got {self.noise}")
        for name in ("native_len_range", "instances_per_video",
                     "context_flank_range", "instance_len_range"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValidationError(f"{name} must be a (lo, hi) pair with 0 <= lo <= hi")
        if 2 * self.feature_dim < self.num_classes:
            raise ValidationError("need 2 * feature_dim >= num_classes for distinct class directions")
        # Worst case must fit: every instance slot needs both flanks plus the
        # shortest instance.
        min_slot = self.native_len_range[0] // max(1, self.instances_per_video[1])
        need = 2 * self.context_flank_range[0] + self.instance_len_range[0]
        if min_slot < need:
            raise ValidationError(
                f"videos of {self.native_len_range[0]} snippets cannot hold "
                f"{self.instances_per_video[1]} instances with flanks ({min_slot} < {need})"
            )

    @property
    def snippet_seconds(self) -> float:
        return self.snippet_frames / self.fps


def _class_directions(rng: np.random.Generator, num_classes: int, width: int) -> np.ndarray:
    gaussian = rng.standard_normal((width, num_classes))
    q, _ = np.linalg.qr(gaussian)
    return q[:, :num_classes].T  # orthonormal rows


def generate_synthetic(
    spec: SyntheticSpec,
) -> tuple[list[tuple[SnippetFeatureSequence, VideoRecord]], list[str]]:
    """Generate a dataset with exact ground truth from a synthetic recipe.

    Returns the (features, record) pairs plus the ordered class-name list.
    Instances within a video never overlap and their context flanks always
    lie inside the video extent.
    """
    rng = np.random.default_rng(spec.seed)
    width = 2 * spec.feature_dim
    directions = _class_directions(rng, spec.num_classes, width)
    class_names = [f"action_{c:02d}" for c in range(spec.num_classes)]
    pairs = []
    for video_idx in range(spec.num_videos):
        native_len = int(rng.integers(spec.native_len_range[0], spec.native_len_range[1] + 1))
        num_instances = int(rng.integers(spec.instances_per_video[0],
                                         spec.instances_per_video[1] + 1))
        base = np.zeros((native_len, width))
        instances = []
        if num_instances > 0:
            slot = native_len // num_instances
            f_lo, f_hi = spec.context_flank_range
            i_lo, i_hi = spec.instance_len_range
            for k in range(num_instances):
                inst_len = int(rng.integers(i_lo, min(i_hi, slot - 2 * f_lo) + 1))
                flank_l = int(rng.integers(f_lo, min(f_hi, slot - inst_len - f_lo) + 1))
                flank_r = int(rng.integers(f_lo, min(f_hi, slot - inst_len - flank_l) + 1))
                free = slot - flank_l - inst_len - flank_r
                offset = int(rng.integers(0, free + 1))
                start = k * slot + offset + flank_l
                end = start + inst_len
                class_id = int(rng.integers(0, spec.num_classes))
                base[start:end] = spec.separation * directions[class_id]
                base[start - flank_l:start] = 0.5 * spec.separation * directions[class_id]
                base[end:end + flank_r] = 0.5 * spec.separation * directions[class_id]
                instances.append(
                    ActionInstance(
                        start_s=start * spec.snippet_seconds,
                        end_s=end * spec.snippet_seconds,
                        class_id=class_id,
                    )
                )
        features = base + spec.noise * rng.standard_normal((native_len, width))
        video_id = f"synth_{video_idx:04d}"
        label = VideoLabel(frozenset(inst.class_id for inst in instances), spec.num_classes)
        record = VideoRecord(
            video_id=video_id,
            duration_s=native_len * spec.snippet_seconds,
            snippet_seconds=spec.snippet_seconds,
            label=label,
            instances=tuple(instances),
        )
        pairs.append((SnippetFeatureSequence(video_id, features.astype(np.float32)), record))
    return pairs, class_names


def write_dataset(
    pairs: list[tuple[SnippetFeatureSequence, VideoRecord]],
    class_names: list[str],
    out_dir: str | Path,
) -> None:
    """Write a dataset in the on-disk formats (features dir + annotations.json)."""
    out_dir = Path(out_dir)
    feature_dir = out_dir / "features"
    feature_dir.mkdir(parents=True, exist_ok=True)
    videos = {}
    for seq, record in pairs:
        write_feature_file(feature_dir / f"{seq.video_id}{FEATURE_SUFFIX}", seq.features)
        # fps and snippet_frames together must reproduce snippet_seconds.
        entry = {
            "duration_s": record.duration_s,
            "fps": 16.0 / record.snippet_seconds,
            "snippet_frames": 16,
            "labels": sorted(class_names[c] for c in record.label.class_ids),
        }
        if record.instances is not None:
            entry["instances"] = [
                [inst.start_s, inst.end_s, class_names[inst.class_id]]
                for inst in record.instances
            ]
        videos[seq.video_id] = entry
    doc = {"class_names": list(class_names), "videos": videos}
    with open(out_dir / "annotations.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def split_dataset(
    pairs: list[tuple[SnippetFeatureSequence, VideoRecord]], num_first: int
) -> tuple[list, list]:
    """Split a dataset into its first ``num_first`` videos and the rest."""
    if not 0 <= num_first <= len(pairs):
        raise ValidationError(
            f"cannot take {num_first} videos from a dataset of {len(pairs)}"
        )
    return pairs[:num_first], pairs[num_first:]
