"""Synthetic embryo movies with exact ground truth.

The generator stands in for the private clinical data and the five
trained networks: it samples a monotone stage trajectory (dwell times
per stage), renders the embryo as simple circle geometry (a zona
annulus drifting in the well, cells as circles whose area roughly
halves per division, pronuclei as two small circles inside the 1-cell
embryo), and then renders per-frame "model outputs" with configurable
noise on every channel. With all noise at zero the rendered outputs
encode the ground truth exactly, which is what end-to-end exactness
tests run on.

Randomness comes from numpy's PCG64 generator seeded through
SeedSequence, so outputs are reproducible for a given (seed, config)
across platforms. Movie generation and output rendering use separate
spawn keys of the same seed, so adding noise never perturbs the
geometry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidConfigError
from .gating import middle_planes
from .model import (
    BinaryMask,
    CandidateKind,
    EmbryoMovie,
    Frame,
    InstanceCandidate,
    ORDERED_CLASSES,
    SegClass,
    SegmentationMap,
    StageClass,
)

# Geometry as fractions of the image size / zona radius.
WELL_RADIUS_FRACTION = 0.47
ZONA_OUTER_FRACTION = 0.30
ZONA_INNER_FRACTION = 0.24
FIRST_CELL_FRACTION = 0.78  # of the zona inner radius
CELL_REGION_FRACTION = 0.92  # packing region inside the zona
PRONUCLEUS_RADIUS_FRACTION = 0.22  # of the current cell radius
PRONUCLEUS_OFFSET_FRACTION = 0.30
MIN_MASK_RADIUS = 1.6

#: Dwell-time ranges (frames, inclusive) per ordered class.
DEFAULT_DWELL_RANGES: tuple[tuple[int, int], ...] = (
    (5, 9),  # 1-cell
    (3, 6),
    (1, 3),
    (3, 6),
    (1, 3),
    (2, 4),
    (1, 3),
    (3, 6),
    (3, 6),  # >= 9 cells
    (5, 8),  # morula
    (6, 10),  # blastocyst
)


@dataclass(frozen=True)
class NoiseConfig:
    """Noise applied when rendering model outputs from ground truth."""

    logit_sigma: float = 0.0
    logit_scale: float = 8.0
    mask_jitter_px: float = 0.0
    confidence_sigma: float = 0.0
    fragmentation_sigma: float = 0.0
    seg_flip_rate: float = 0.0


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    embryo_id: str = "synth-0000"
    frames: int = 40
    image_size: int = 500
    plane_count: int = 7
    frame_interval_minutes: float = 20.0
    dwell_ranges: tuple[tuple[int, int], ...] = DEFAULT_DWELL_RANGES
    fragmentation_distribution: tuple[float, float, float, float] = (
        0.25,
        0.25,
        0.25,
        0.25,
    )
    # Fractions of 1-cell frames showing 0, 1, or 2 pronuclei.
    pronucleus_distribution: tuple[float, float, float] = (0.38, 0.06, 0.54)
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    def __post_init__(self):
        if self.frames < 1:
            raise InvalidConfigError("frames must be >= 1")
        if self.image_size < 48:
            raise InvalidConfigError("image_size must be >= 48 for the geometry")
        if self.plane_count != 7:
            # Movie manifests carry exactly 7 focal-plane references.
            raise InvalidConfigError("plane_count must be 7")
        if self.frame_interval_minutes <= 0:
            raise InvalidConfigError("frame interval must be positive")
        dwell = tuple((int(lo), int(hi)) for lo, hi in self.dwell_ranges)
        if len(dwell) != len(ORDERED_CLASSES):
            raise InvalidConfigError(
                f"need {len(ORDERED_CLASSES)} dwell ranges, got {len(dwell)}"
            )
        if any(lo < 1 or hi < lo for lo, hi in dwell):
            raise InvalidConfigError("dwell ranges must satisfy 1 <= lo <= hi")
        # Distributions may carry rounded entries (the pronucleus default
        # sums to 0.98); accept anything near 1 and renormalize exactly.
        for name, attr, arity in (
            ("fragmentation", "fragmentation_distribution", 4),
            ("pronucleus", "pronucleus_distribution", 3),
        ):
            d = tuple(float(x) for x in getattr(self, attr))
            total = sum(d)
            if len(d) != arity or any(x < 0 for x in d) or abs(total - 1.0) > 0.05:
                raise InvalidConfigError(
                    f"{name} distribution must be {arity} non-negative "
                    "values summing to ~1"
                )
            object.__setattr__(self, attr, tuple(x / total for x in d))
        n = self.noise
        if min(
            n.logit_sigma,
            n.mask_jitter_px,
            n.confidence_sigma,
            n.fragmentation_sigma,
        ) < 0:
            raise InvalidConfigError("noise sigmas must be >= 0")
        if not 0.0 <= n.seg_flip_rate <= 1.0:
            raise InvalidConfigError("seg_flip_rate must be in [0, 1]")
        if n.logit_scale <= 0:
            raise InvalidConfigError("logit_scale must be positive")
        object.__setattr__(self, "dwell_ranges", dwell)
        object.__setattr__(self, "frames", int(self.frames))
        object.__setattr__(self, "image_size", int(self.image_size))
        object.__setattr__(self, "seed", int(self.seed))


Circle = tuple[float, float, float]  # (cx, cy, r)


@dataclass(frozen=True)
class GroundTruth:
    """Exact per-frame truth for one synthetic embryo."""

    embryo_id: str
    image_size: int
    plane_count: int
    stages: tuple[StageClass, ...]
    fragmentation_grades: tuple[int, ...]
    seg_maps: tuple[SegmentationMap, ...]
    cell_masks: tuple[tuple[BinaryMask, ...], ...]
    pronucleus_masks: tuple[tuple[BinaryMask, ...], ...]
    # Circle parameters behind the masks; the renderer jitters these.
    cell_circles: tuple[tuple[Circle, ...], ...]
    pronucleus_circles: tuple[tuple[Circle, ...], ...]

    def __post_init__(self):
        ordered = [int(s) for s in self.stages if s.is_ordered]
        if any(b < a for a, b in zip(ordered, ordered[1:])):
            raise InvalidConfigError("true stages must be non-decreasing")
        for stage, masks in zip(self.stages, self.cell_masks):
            count = stage.cell_count
            if count is not None and len(masks) != count:
                raise InvalidConfigError(
                    f"{stage.token} frame has {len(masks)} cell masks"
                )


@dataclass(frozen=True)
class RenderedOutputs:
    """Synthetic per-frame backend outputs for one embryo."""

    seg_maps: tuple[SegmentationMap, ...]  # middle plane, one per frame
    fragmentation: tuple[Mapping[int, float], ...]  # plane -> score
    stage_probs: tuple[np.ndarray, ...]  # 13-class vector per frame
    cells: tuple[Mapping[int, tuple[InstanceCandidate, ...]], ...]
    pronuclei: tuple[Mapping[int, tuple[InstanceCandidate, ...]], ...]


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(stream,)))
    )


def derive_embryo_seed(base_seed: int, index: int) -> int:
    """Independent per-embryo seed for parallel batch generation."""
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=(1000, index))
    return int(ss.generate_state(1, np.uint64)[0])


def _disk(size: int, cx: float, cy: float, r: float) -> np.ndarray:
    yy, xx = np.ogrid[:size, :size]
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


def _sample_stages(rng: np.random.Generator, config: SynthConfig):
    seq: list[StageClass] = []
    for cls, (lo, hi) in zip(ORDERED_CLASSES, config.dwell_ranges):
        dwell = int(rng.integers(lo, hi + 1))
        seq.extend([cls] * dwell)
    if len(seq) < config.frames:
        seq.extend([ORDERED_CLASSES[-1]] * (config.frames - len(seq)))
    return tuple(seq[: config.frames])


def _pronucleus_plan(rng: np.random.Generator, n_frames: int, dist) -> list[int]:
    """Per-frame pronucleus counts over the 1-cell stage.

    Counts per value come from a multinomial over the configured
    distribution; they are laid out as rise-and-fade
    (0.., 1.., 2.., 1.., 0..) so pronuclei appear and disappear in
    contiguous sub-intervals.
    """
    if n_frames == 0:
        return []
    n0, n1, n2 = (int(v) for v in rng.multinomial(n_frames, dist))
    lead0 = (n0 + 1) // 2
    lead1 = (n1 + 1) // 2
    return (
        [0] * lead0
        + [1] * lead1
        + [2] * n2
        + [1] * (n1 - lead1)
        + [0] * (n0 - lead0)
    )


def _cell_layout(
    n: int, zona_inner: float, theta: float
) -> list[tuple[float, float, float]]:
    """Offsets (dx, dy) and radius for n cells packed in the zona."""
    radius = FIRST_CELL_FRACTION * zona_inner / math.sqrt(n)
    region = CELL_REGION_FRACTION * zona_inner
    ring = max(region - radius, 0.0)
    offsets: list[tuple[float, float]] = []
    if n == 1:
        offsets.append((0.0, 0.0))
    else:
        on_ring = n if n <= 6 else n - 1
        if n > 6:
            offsets.append((0.0, 0.0))
        for k in range(on_ring):
            angle = theta + 2.0 * math.pi * k / on_ring
            offsets.append((ring * math.cos(angle), ring * math.sin(angle)))
    return [(dx, dy, radius) for dx, dy in offsets]


def generate_movie(config: SynthConfig) -> tuple[EmbryoMovie, GroundTruth]:
    """Generate one synthetic movie and its exact ground truth.

    Deterministic for a given config: calling twice returns identical
    objects. Frame timestamps run at the configured cadence starting
    at 0 minutes.
    """
    rng = _rng(config.seed, 0)
    size = config.image_size
    stages = _sample_stages(rng, config)
    grade = int(rng.choice(4, p=config.fragmentation_distribution))

    one_cell = [i for i, s in enumerate(stages) if s == StageClass.CELL_1]
    plan = _pronucleus_plan(rng, len(one_cell), config.pronucleus_distribution)
    pronuclei_per_frame = dict(zip(one_cell, plan))

    zona_outer = ZONA_OUTER_FRACTION * size
    zona_inner = ZONA_INNER_FRACTION * size
    well_r = WELL_RADIUS_FRACTION * size

    base = size / 2.0 + rng.uniform(-0.02 * size, 0.02 * size, size=2)
    drift = np.cumsum(rng.normal(0.0, 0.002 * size, size=(config.frames, 2)), axis=0)
    centers = np.clip(base + drift, size / 2.0 - 0.04 * size, size / 2.0 + 0.04 * size)
    theta0 = float(rng.uniform(0.0, 2.0 * math.pi))
    spin = float(rng.uniform(-0.03, 0.03))
    pn_angle = float(rng.uniform(0.0, 2.0 * math.pi))

    seg_maps = []
    cell_masks = []
    cell_circles = []
    pn_masks = []
    pn_circles = []
    well = _disk(size, size / 2.0, size / 2.0, well_r)
    for i, stage in enumerate(stages):
        cx, cy = float(centers[i, 0]), float(centers[i, 1])
        labels = np.full((size, size), SegClass.OUTSIDE_WELL, dtype=np.uint8)
        labels[well] = SegClass.INSIDE_WELL
        labels[_disk(size, cx, cy, zona_outer)] = SegClass.ZONA
        labels[_disk(size, cx, cy, zona_inner)] = SegClass.INSIDE_ZONA
        seg_maps.append(SegmentationMap(labels))

        count = stage.cell_count
        circles: list[Circle] = []
        if count is not None:
            layout = _cell_layout(count, zona_inner, theta0 + spin * i)
            jitter = rng.normal(0.0, 0.004 * size, size=(count, 2))
            circles = [
                (cx + dx + float(jitter[k, 0]), cy + dy + float(jitter[k, 1]), r)
                for k, (dx, dy, r) in enumerate(layout)
            ]
        cell_circles.append(tuple(circles))
        cell_masks.append(
            tuple(BinaryMask.from_array(_disk(size, *c)) for c in circles)
        )

        pn: list[Circle] = []
        n_pn = pronuclei_per_frame.get(i, 0)
        if n_pn > 0:
            ccx, ccy, cr = circles[0]
            off = PRONUCLEUS_OFFSET_FRACTION * cr
            pn_r = PRONUCLEUS_RADIUS_FRACTION * cr
            signs = (1.0,) if n_pn == 1 else (1.0, -1.0)
            pn = [
                (
                    ccx + s * off * math.cos(pn_angle),
                    ccy + s * off * math.sin(pn_angle),
                    pn_r,
                )
                for s in signs
            ]
        pn_circles.append(tuple(pn))
        pn_masks.append(tuple(BinaryMask.from_array(_disk(size, *c)) for c in pn))

    frames = tuple(
        Frame(
            time_minutes=i * config.frame_interval_minutes,
            planes=tuple(
                f"synth://{config.embryo_id}/f{i:04d}/p{j}"
                for j in range(config.plane_count)
            ),
        )
        for i in range(config.frames)
    )
    movie = EmbryoMovie(
        embryo_id=config.embryo_id, frames=frames, image_size=size
    )
    truth = GroundTruth(
        embryo_id=config.embryo_id,
        image_size=size,
        plane_count=config.plane_count,
        stages=stages,
        fragmentation_grades=tuple([grade] * config.frames),
        seg_maps=tuple(seg_maps),
        cell_masks=tuple(cell_masks),
        pronucleus_masks=tuple(pn_masks),
        cell_circles=tuple(cell_circles),
        pronucleus_circles=tuple(pn_circles),
    )
    return movie, truth


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def _noisy_candidates(
    rng: np.random.Generator,
    circles: Sequence[Circle],
    truth_masks: Sequence[BinaryMask],
    size: int,
    planes: Sequence[int],
    kind: CandidateKind,
    noise: NoiseConfig,
) -> dict[int, tuple[InstanceCandidate, ...]]:
    per_plane: dict[int, tuple[InstanceCandidate, ...]] = {}
    truth_arrays = [m.to_array() for m in truth_masks]
    truth_areas = [int(a.sum()) for a in truth_arrays]
    for plane in planes:
        cands = []
        for k, (cx, cy, r) in enumerate(circles):
            if noise.mask_jitter_px > 0:
                cx = cx + float(rng.normal(0.0, noise.mask_jitter_px))
                cy = cy + float(rng.normal(0.0, noise.mask_jitter_px))
                r = r + float(rng.normal(0.0, noise.mask_jitter_px / 2.0))
            r = max(r, MIN_MASK_RADIUS)
            cx = float(np.clip(cx, r + 1.0, size - 2.0 - r))
            cy = float(np.clip(cy, r + 1.0, size - 2.0 - r))
            arr = _disk(size, cx, cy, r)
            inter = int(np.logical_and(arr, truth_arrays[k]).sum())
            union = int(arr.sum()) + truth_areas[k] - inter
            iou = inter / union if union > 0 else 0.0
            confidence = iou
            if noise.confidence_sigma > 0:
                confidence += float(rng.normal(0.0, noise.confidence_sigma))
            confidence = float(np.clip(confidence, 0.0, 1.0))
            cands.append(
                InstanceCandidate.from_mask(
                    BinaryMask.from_array(arr), confidence, plane, kind
                )
            )
        per_plane[plane] = tuple(cands)
    return per_plane


def render_model_outputs(
    truth: GroundTruth, config: SynthConfig
) -> RenderedOutputs:
    """Render noisy per-frame backend outputs from ground truth.

    Stage probabilities are softmax(one-hot * logit_scale + noise), or
    the exact one-hot vector when logit_sigma is 0. Fragmentation plane
    scores are the true grade plus Gaussian noise, clamped to [0, 3].
    Candidates are the true circles with jittered centers/radii,
    duplicated on each middle plane, with confidence = clamp(IoU with
    truth + noise). Segmentation maps get independent per-pixel label
    flips at the configured rate. Deterministic for a given
    (truth, config).
    """
    rng = _rng(config.seed, 1)
    noise = config.noise
    size = truth.image_size
    planes = middle_planes(truth.plane_count)

    seg_maps = []
    frag = []
    probs = []
    cells = []
    pronuclei = []
    for i, stage in enumerate(truth.stages):
        # Stage probabilities.
        if noise.logit_sigma == 0:
            vec = np.zeros(13)
            vec[int(stage)] = 1.0
        else:
            logits = np.zeros(13)
            logits[int(stage)] = noise.logit_scale
            logits = logits + rng.normal(0.0, noise.logit_sigma, size=13)
            vec = _softmax(logits)
        probs.append(vec)

        # Fragmentation scores on the middle planes.
        grade = float(truth.fragmentation_grades[i])
        scores = {}
        for plane in planes:
            s = grade
            if noise.fragmentation_sigma > 0:
                s += float(rng.normal(0.0, noise.fragmentation_sigma))
            scores[plane] = float(np.clip(s, 0.0, 3.0))
        frag.append(scores)

        # Zona segmentation with pixel flips.
        seg = truth.seg_maps[i]
        if noise.seg_flip_rate > 0:
            labels = np.array(seg.labels)
            flip = rng.random(labels.shape) < noise.seg_flip_rate
            # A flipped pixel moves to a uniformly random *other* class.
            shift = rng.integers(1, 4, size=labels.shape).astype(np.uint8)
            labels[flip] = (labels[flip] + shift[flip]) % 4
            seg = SegmentationMap(labels)
        seg_maps.append(seg)

        cells.append(
            _noisy_candidates(
                rng,
                truth.cell_circles[i],
                truth.cell_masks[i],
                size,
                planes,
                CandidateKind.CELL,
                noise,
            )
        )
        pronuclei.append(
            _noisy_candidates(
                rng,
                truth.pronucleus_circles[i],
                truth.pronucleus_masks[i],
                size,
                planes,
                CandidateKind.PRONUCLEUS,
                noise,
            )
        )

    return RenderedOutputs(
        seg_maps=tuple(seg_maps),
        fragmentation=tuple(frag),
        stage_probs=tuple(probs),
        cells=tuple(cells),
        pronuclei=tuple(pronuclei),
    )
