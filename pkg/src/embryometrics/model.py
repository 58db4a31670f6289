"""Core domain types shared by every module.

All types are immutable value objects after construction: numpy payloads
are stored as read-only arrays and the dataclasses are frozen, so
instances can be shared freely across threads.

The 13 developmental classes use one canonical index order everywhere,
including serialized vectors and matrices: ``CELL_1 = 0`` through
``DEGENERATE = 12``. The first 11 classes form the developmental order a
trajectory may move along; ``EMPTY`` and ``DEGENERATE`` sit outside it.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    LengthMismatchError,
    NegativeProbabilityError,
    NotNormalizedError,
    ValidationError,
)

NUM_CLASSES = 13

# |sum - 1| tolerated before a vector is rejected; accepted vectors are
# renormalized so the stored sum is 1 to within an ulp.
PROB_TOLERANCE = 1e-6

# Below this drift a vector counts as already normalized and is returned
# unchanged, which is what makes validation idempotent.
EXACT_SUM_ATOL = 1e-12

NEGATIVE_CLAMP = -1e-9


class StageClass(IntEnum):
    """Developmental stage labels, in canonical index order."""

    CELL_1 = 0
    CELL_2 = 1
    CELL_3 = 2
    CELL_4 = 3
    CELL_5 = 4
    CELL_6 = 5
    CELL_7 = 6
    CELL_8 = 7
    CELL_9_PLUS = 8
    MORULA = 9
    BLASTOCYST = 10
    EMPTY = 11
    DEGENERATE = 12

    @property
    def is_ordered(self) -> bool:
        """True for the 11 classes that participate in the stage order."""
        return self <= StageClass.BLASTOCYST

    @property
    def cell_count(self) -> int | None:
        """Number of cells for the 1--8 cell classes, else None."""
        if StageClass.CELL_1 <= self <= StageClass.CELL_8:
            return int(self) + 1
        return None

    @property
    def token(self) -> str:
        return _STAGE_TOKENS[self]

    @classmethod
    def from_token(cls, token: str) -> "StageClass":
        try:
            return _STAGE_FROM_TOKEN[token]
        except KeyError:
            raise ValidationError(f"unknown stage class token: {token!r}") from None


_STAGE_TOKENS = {
    StageClass.CELL_1: "cell1",
    StageClass.CELL_2: "cell2",
    StageClass.CELL_3: "cell3",
    StageClass.CELL_4: "cell4",
    StageClass.CELL_5: "cell5",
    StageClass.CELL_6: "cell6",
    StageClass.CELL_7: "cell7",
    StageClass.CELL_8: "cell8",
    StageClass.CELL_9_PLUS: "cell9plus",
    StageClass.MORULA: "morula",
    StageClass.BLASTOCYST: "blastocyst",
    StageClass.EMPTY: "empty",
    StageClass.DEGENERATE: "degenerate",
}
_STAGE_FROM_TOKEN = {v: k for k, v in _STAGE_TOKENS.items()}

#: The 11 classes a decoded trajectory may move along, in order.
ORDERED_CLASSES: tuple[StageClass, ...] = tuple(
    c for c in StageClass if c.is_ordered
)

#: Classes whose frames are excluded from trajectory decoding.
EXCLUDED_CLASSES: tuple[StageClass, ...] = (StageClass.EMPTY, StageClass.DEGENERATE)


class SegClass(IntEnum):
    """Per-pixel classes of the zona segmentation."""

    OUTSIDE_WELL = 0
    INSIDE_WELL = 1
    ZONA = 2
    INSIDE_ZONA = 3


class CandidateKind(IntEnum):
    """What an instance candidate outlines."""

    CELL = 0
    PRONUCLEUS = 1

    @property
    def token(self) -> str:
        return "cell" if self is CandidateKind.CELL else "pronucleus"

    @classmethod
    def from_token(cls, token: str) -> "CandidateKind":
        if token == "cell":
            return cls.CELL
        if token == "pronucleus":
            return cls.PRONUCLEUS
        raise ValidationError(f"unknown candidate kind: {token!r}")


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.flags.writeable = False
    return out


def validate_prob_vector(raw: Sequence[float] | np.ndarray) -> np.ndarray:
    """Validate a raw 13-class probability vector.

    Entries in [-1e-9, 0) are clamped to 0. The sum must be within 1e-6
    of 1; accepted vectors are renormalized so they sum to 1 within an
    ulp (bit-exact unit sums are unreachable for some inputs). The
    function is idempotent: a vector already within 1e-12 of unit sum is
    returned unchanged (as a read-only copy).

    Raises:
        NegativeProbabilityError: an entry is below -1e-9.
        NotNormalizedError: the sum is off by more than 1e-6.
        ValidationError: wrong length or non-finite entries.
    """
    p = np.asarray(raw, dtype=np.float64)
    if p.shape != (NUM_CLASSES,):
        raise ValidationError(f"expected {NUM_CLASSES} entries, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValidationError("probability vector has non-finite entries")
    if np.any(p < NEGATIVE_CLAMP):
        raise NegativeProbabilityError(
            f"negative probability entry: min = {p.min():.3e}"
        )
    p = np.where(p < 0.0, 0.0, p)
    total = float(p.sum())
    if abs(total - 1.0) > PROB_TOLERANCE:
        raise NotNormalizedError(f"probabilities sum to {total!r}, not 1")
    if abs(total - 1.0) > EXACT_SUM_ATOL:
        p = p / total
        # Push the division's rounding residual into the largest entry;
        # the result sums to 1 within an ulp and revalidates unchanged.
        residual = 1.0 - float(p.sum())
        if residual != 0.0:
            p = np.array(p)
            p[int(np.argmax(p))] += residual
    return _readonly(p)


@dataclass(frozen=True)
class StageProbabilityMatrix:
    """Per-frame 13-class probability rows with frame timestamps."""

    probs: np.ndarray  # (T, 13) float64, each row a validated ProbVector13
    times: np.ndarray  # (T,) minutes, strictly increasing

    def __init__(self, rows: Iterable[Sequence[float]], times: Iterable[float]):
        probs = np.array([validate_prob_vector(r) for r in rows], dtype=np.float64)
        t = np.asarray(list(times), dtype=np.float64)
        if probs.shape[0] == 0:
            raise ValidationError("matrix needs at least one frame")
        if t.shape != (probs.shape[0],):
            raise LengthMismatchError(
                f"{probs.shape[0]} probability rows but times have shape {t.shape}"
            )
        if np.any(np.diff(t) <= 0):
            raise ValidationError("frame times must be strictly increasing")
        object.__setattr__(self, "probs", _readonly(probs))
        object.__setattr__(self, "times", _readonly(t))

    def __len__(self) -> int:
        return int(self.probs.shape[0])


@dataclass(frozen=True)
class ConfusionMatrix:
    """Label-noise model: ``q[t][l]`` = p(observed label l | true class t).

    Every row is a valid probability vector over the 13 classes.
    """

    q: np.ndarray  # (13, 13) float64, row-stochastic

    def __init__(self, rows: Sequence[Sequence[float]] | np.ndarray):
        arr = np.asarray(rows, dtype=np.float64)
        if arr.shape != (NUM_CLASSES, NUM_CLASSES):
            raise ValidationError(
                f"confusion matrix must be {NUM_CLASSES}x{NUM_CLASSES}, got {arr.shape}"
            )
        validated = np.array([validate_prob_vector(r) for r in arr])
        object.__setattr__(self, "q", _readonly(validated))

    @classmethod
    def identity(cls) -> "ConfusionMatrix":
        return cls(np.eye(NUM_CLASSES))

    def row(self, true_class: StageClass) -> np.ndarray:
        return self.q[int(true_class)]

    def to_rows(self) -> list[list[float]]:
        """13x13 nested lists, rows indexed by true class."""
        return [[float(v) for v in row] for row in self.q]

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "ConfusionMatrix":
        return cls(rows)


@dataclass(frozen=True)
class SegmentationMap:
    """Per-pixel 4-class zona segmentation on a width x height grid."""

    labels: np.ndarray  # (height, width) uint8 with values in SegClass

    def __init__(self, labels: np.ndarray | Sequence[Sequence[int]]):
        arr = np.asarray(labels)
        if arr.ndim != 2 or arr.size == 0:
            raise ValidationError("segmentation map must be a non-empty 2-D grid")
        if arr.min() < 0 or arr.max() > 3:
            raise ValidationError("segmentation labels must be in 0..3")
        object.__setattr__(self, "labels", _readonly(arr.astype(np.uint8)))

    @property
    def width(self) -> int:
        return int(self.labels.shape[1])

    @property
    def height(self) -> int:
        return int(self.labels.shape[0])


@dataclass(frozen=True)
class BinaryMask:
    """A binary mask stored as row-major run-length encoding.

    ``runs`` alternate background/foreground counts starting with
    background (which may be 0); all later runs are positive and the
    counts sum to ``width * height``. This canonical layout makes the
    serialized form bit-exact for a given pixel set.
    """

    width: int
    height: int
    runs: tuple[int, ...]

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("mask dimensions must be positive")
        runs = tuple(int(r) for r in self.runs)
        if len(runs) == 0:
            raise ValidationError("runs may not be empty")
        if runs[0] < 0 or any(r <= 0 for r in runs[1:]):
            raise ValidationError(
                "first run must be >= 0 and all later runs > 0 (canonical RLE)"
            )
        if sum(runs) != self.width * self.height:
            raise ValidationError(
                f"run lengths sum to {sum(runs)}, expected {self.width * self.height}"
            )
        object.__setattr__(self, "runs", runs)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @classmethod
    def from_array(cls, arr: np.ndarray | Sequence[Sequence[int]]) -> "BinaryMask":
        """Encode a 2-D boolean/0-1 array (row-major, background first)."""
        a = np.asarray(arr)
        if a.ndim != 2 or a.size == 0:
            raise ValidationError("mask must be a non-empty 2-D grid")
        flat = (a != 0).ravel()
        # Boundaries where the pixel value changes, plus both ends.
        changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
        bounds = np.concatenate(([0], changes, [flat.size]))
        runs = np.diff(bounds).tolist()
        if flat[0]:
            runs = [0] + runs
        return cls(width=int(a.shape[1]), height=int(a.shape[0]), runs=tuple(runs))

    def to_array(self) -> np.ndarray:
        """Decode to a (height, width) boolean array."""
        flat = np.zeros(self.width * self.height, dtype=bool)
        pos = 0
        fg = False
        for run in self.runs:
            if fg:
                flat[pos : pos + run] = True
            pos += run
            fg = not fg
        return flat.reshape(self.height, self.width)

    @property
    def area(self) -> int:
        """Foreground pixel count."""
        return int(sum(self.runs[1::2]))

    def tight_bbox(self) -> tuple[int, int, int, int]:
        """Tight (x, y, w, h) bounding box of the foreground.

        Raises ValidationError on an empty mask.
        """
        arr = self.to_array()
        rows = np.flatnonzero(arr.any(axis=1))
        cols = np.flatnonzero(arr.any(axis=0))
        if rows.size == 0:
            raise ValidationError("empty mask has no bounding box")
        y0, y1 = int(rows[0]), int(rows[-1])
        x0, x1 = int(cols[0]), int(cols[-1])
        return (x0, y0, x1 - x0 + 1, y1 - y0 + 1)


@dataclass(frozen=True)
class InstanceCandidate:
    """One scored detection: mask, tight bbox, confidence, plane, kind."""

    mask: BinaryMask
    bbox: tuple[int, int, int, int]
    confidence: float
    plane: int
    kind: CandidateKind

    def __post_init__(self):
        if self.mask.area <= 0:
            raise ValidationError("candidate mask must have positive area")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"confidence {self.confidence} outside [0, 1]")
        if not 0 <= self.plane <= 6:
            raise ValidationError(f"plane index {self.plane} outside 0..6")
        bbox = tuple(int(v) for v in self.bbox)
        if bbox != self.mask.tight_bbox():
            raise ValidationError(
                f"bbox {bbox} is not the tight bounding box {self.mask.tight_bbox()}"
            )
        object.__setattr__(self, "bbox", bbox)
        object.__setattr__(self, "confidence", float(self.confidence))
        object.__setattr__(self, "plane", int(self.plane))
        object.__setattr__(self, "kind", CandidateKind(self.kind))

    @classmethod
    def from_mask(
        cls, mask: BinaryMask, confidence: float, plane: int, kind: CandidateKind
    ) -> "InstanceCandidate":
        return cls(
            mask=mask,
            bbox=mask.tight_bbox(),
            confidence=confidence,
            plane=plane,
            kind=kind,
        )


@dataclass(frozen=True)
class FragmentationScore:
    """Clinical fragmentation grade as a real number in [0, 3]."""

    value: float

    def __post_init__(self):
        v = float(self.value)
        if not np.isfinite(v) or not 0.0 <= v <= 3.0:
            raise ValidationError(f"fragmentation score {self.value} outside [0, 3]")
        object.__setattr__(self, "value", v)


@dataclass(frozen=True)
class Frame:
    """One movie time point: timestamp plus its 7 focal-plane references."""

    time_minutes: float
    planes: tuple[str, ...]

    def __post_init__(self):
        planes = tuple(str(p) for p in self.planes)
        if len(planes) != 7:
            raise ValidationError(f"frame needs exactly 7 plane refs, got {len(planes)}")
        object.__setattr__(self, "planes", planes)
        object.__setattr__(self, "time_minutes", float(self.time_minutes))


@dataclass(frozen=True)
class EmbryoMovie:
    """Input movie manifest: per-frame focal-plane image references."""

    embryo_id: str
    frames: tuple[Frame, ...]
    image_size: int = 500
    plane_spacing_um: float = 15.0

    def __post_init__(self):
        frames = tuple(self.frames)
        if len(frames) == 0:
            raise ValidationError("movie needs at least one frame")
        times = [f.time_minutes for f in frames]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError("frame times must be strictly increasing")
        if self.image_size <= 0:
            raise ValidationError("image_size must be positive")
        object.__setattr__(self, "frames", frames)

    @property
    def times(self) -> tuple[float, ...]:
        return tuple(f.time_minutes for f in self.frames)

    def __len__(self) -> int:
        return len(self.frames)
