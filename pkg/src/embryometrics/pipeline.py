"""Five-stage measurement pipeline and its evaluation.

Per frame: (1) segment the zona on the middle focal plane and derive
the embryo ROI; (2) score fragmentation on the three middle planes and
average. The embryo-level gate (median frame score vs threshold) then
decides whether the remaining stages run at all: high-fragmentation
embryos keep only their segmentation and fragmentation records.
For low-fragmentation embryos: (3) classify stages and decode the
monotone trajectory; (4) route each frame to detectors by decoded
stage; (5) detect on the three middle planes and merge across planes.

Ablation flags turn off the ROI (full-frame window), focus averaging
(middle plane only), and trajectory decoding (raw per-frame argmax).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from . import serialize
from .backends import BackendSuite
from .decoder import argmax_trajectory, decode_monotone, exclude_frames
from .errors import (
    EmbryoMetricsError,
    BackendError,
    FrameMismatchError,
    InvalidConfigError,
    MissingPlanesError,
    NoEmbryoError,
    NoTruthsError,
)
from .gating import (
    GateDecision,
    average_fragmentation,
    gate_embryo,
    middle_planes,
    route_frame,
    Detector,
)
from .geometry import Roi, center_roi, embryo_roi, merge_across_planes
from .metrics import (
    DetectionBlock,
    EvaluationReport,
    FragmentationBlock,
    SegmentationBlock,
    StageBlock,
    fragmentation_metrics,
    match_instances,
    mean_average_precision,
    pixel_accuracy,
    stage_metrics,
)
from .model import (
    EmbryoMovie,
    FragmentationScore,
    InstanceCandidate,
    SegmentationMap,
    StageClass,
    StageProbabilityMatrix,
    validate_prob_vector,
)
from .synth import GroundTruth


@dataclass(frozen=True)
class PipelineConfig:
    roi_side: int = 328
    fragmentation_threshold: float = 1.5
    gate_aggregation: str = "median"  # or "mean"
    merge_iou_threshold: float = 0.5
    match_iou_threshold: float = 0.5  # evaluation operating point for P/R
    use_roi: bool = True
    use_focus_averaging: bool = True
    use_dp: bool = True

    def __post_init__(self):
        if self.roi_side <= 0:
            raise InvalidConfigError("roi_side must be positive")
        if not 0.0 <= self.fragmentation_threshold <= 3.0:
            raise InvalidConfigError("fragmentation_threshold must be in [0, 3]")
        if self.gate_aggregation not in ("median", "mean"):
            raise InvalidConfigError("gate_aggregation must be 'median' or 'mean'")
        for name in ("merge_iou_threshold", "match_iou_threshold"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise InvalidConfigError(f"{name} must be in (0, 1]")

    def to_obj(self) -> dict:
        return {
            "roi_side": self.roi_side,
            "fragmentation_threshold": self.fragmentation_threshold,
            "gate_aggregation": self.gate_aggregation,
            "merge_iou_threshold": self.merge_iou_threshold,
            "match_iou_threshold": self.match_iou_threshold,
            "use_roi": self.use_roi,
            "use_focus_averaging": self.use_focus_averaging,
            "use_dp": self.use_dp,
        }

    @classmethod
    def from_obj(cls, obj: Mapping[str, Any]) -> "PipelineConfig":
        known = {k: obj[k] for k in cls().to_obj() if k in obj}
        return cls(**known)


@dataclass(frozen=True)
class FrameRecord:
    """Everything the pipeline measured on one frame."""

    time_minutes: float
    roi: Roi
    roi_fallback: bool
    seg_map: SegmentationMap
    fragmentation_score: FragmentationScore
    stage_probs: np.ndarray | None
    argmax_class: StageClass | None
    decoded_class: StageClass | None
    excluded: bool | None
    cells: tuple[InstanceCandidate, ...] | None
    pronuclei: tuple[InstanceCandidate, ...] | None


@dataclass(frozen=True)
class PipelineResult:
    embryo_id: str
    config: PipelineConfig
    gate: GateDecision
    frames: tuple[FrameRecord, ...]

    def decoded_stages(self) -> list[StageClass | None]:
        return [f.decoded_class for f in self.frames]


def _require_planes(movie: EmbryoMovie, frame: int, planes) -> None:
    refs = movie.frames[frame].planes
    for p in planes:
        if p >= len(refs) or not refs[p]:
            raise MissingPlanesError(
                f"frame {frame} is missing focal plane {p}"
            )


def _call(stage_name: str, frame: int, fn, *args):
    try:
        return fn(*args)
    except BackendError:
        raise
    except Exception as e:  # noqa: BLE001 - backends are third-party code
        raise BackendError(stage_name, frame, repr(e)) from e


def run_pipeline(
    movie: EmbryoMovie, backends: BackendSuite, config: PipelineConfig
) -> PipelineResult:
    """Run the five-stage pipeline over one movie.

    Raises:
        BackendError: a backend failed on some frame; the embryo is
            aborted rather than partially recorded.
        MissingPlanesError: a frame lacks a needed plane reference.
    """
    size = movie.image_size
    n = len(movie)
    plane_count = len(movie.frames[0].planes)
    mid = plane_count // 2
    frag_planes = middle_planes(plane_count) if config.use_focus_averaging else (mid,)
    detect_planes = middle_planes(plane_count)

    # (1) zona segmentation and ROI, (2) fragmentation scores.
    seg_maps: list[SegmentationMap] = []
    rois: list[Roi] = []
    fallbacks: list[bool] = []
    frag_scores: list[FragmentationScore] = []
    for i in range(n):
        _require_planes(movie, i, {mid, *frag_planes})
        seg = _call("zona_segmentation", i, backends.segmenter.segment, movie, i, mid)
        if (seg.width, seg.height) != (size, size):
            raise BackendError(
                "zona_segmentation",
                i,
                f"map is {seg.width}x{seg.height}, movie frames are {size}x{size}",
            )
        seg_maps.append(seg)
        if config.use_roi:
            try:
                roi = embryo_roi(seg, config.roi_side)
                fallback = False
            except NoEmbryoError:
                roi = center_roi(size, size, config.roi_side)
                fallback = True
        else:
            roi = center_roi(size, size)
            fallback = False
        rois.append(roi)
        fallbacks.append(fallback)

        plane_scores = []
        for p in frag_planes:
            raw = _call(
                "fragmentation", i, backends.fragmentation.score, movie, i, p, roi
            )
            if not np.isfinite(raw):
                raise BackendError("fragmentation", i, f"non-finite score {raw!r}")
            plane_scores.append(FragmentationScore(min(3.0, max(0.0, float(raw)))))
        if len(plane_scores) == 3:
            frag_scores.append(average_fragmentation(plane_scores))
        else:
            frag_scores.append(plane_scores[0])

    gate = gate_embryo(
        frag_scores, config.fragmentation_threshold, config.gate_aggregation
    )

    if not gate.low_fragmentation:
        frames = tuple(
            FrameRecord(
                time_minutes=movie.frames[i].time_minutes,
                roi=rois[i],
                roi_fallback=fallbacks[i],
                seg_map=seg_maps[i],
                fragmentation_score=frag_scores[i],
                stage_probs=None,
                argmax_class=None,
                decoded_class=None,
                excluded=None,
                cells=None,
                pronuclei=None,
            )
            for i in range(n)
        )
        return PipelineResult(
            embryo_id=movie.embryo_id, config=config, gate=gate, frames=frames
        )

    # (3) stage classification and trajectory decoding. Malformed
    # vectors count as backend failures, not caller mistakes.
    rows = [
        _call(
            "stage_classification",
            i,
            lambda i=i: validate_prob_vector(
                backends.stage.probabilities(movie, i, rois[i])
            ),
        )
        for i in range(n)
    ]
    matrix = StageProbabilityMatrix(rows, movie.times)
    if config.use_dp:
        trajectory = decode_monotone(matrix)
        argmaxes = [f.argmax_class for f in trajectory.frames]
        decoded = [f.decoded_class for f in trajectory.frames]
        excluded = [f.excluded for f in trajectory.frames]
    else:
        argmaxes = argmax_trajectory(matrix)
        decoded = list(argmaxes)
        excluded = exclude_frames(matrix)

    # (4) routing and (5) detection with cross-plane merging.
    cells: list[tuple[InstanceCandidate, ...] | None] = []
    pronuclei: list[tuple[InstanceCandidate, ...] | None] = []
    for i in range(n):
        detectors = route_frame(decoded[i])
        frame_cells = None
        frame_pn = None
        if Detector.CELL in detectors:
            _require_planes(movie, i, detect_planes)
            pooled = [
                c
                for p in detect_planes
                for c in _call("cell_detection", i, backends.cells.detect, movie, i, p, rois[i])
            ]
            frame_cells = tuple(
                merge_across_planes(pooled, config.merge_iou_threshold)
            )
        if Detector.PRONUCLEUS in detectors:
            _require_planes(movie, i, detect_planes)
            pooled = [
                c
                for p in detect_planes
                for c in _call(
                    "pronucleus_detection", i, backends.pronuclei.detect, movie, i, p, rois[i]
                )
            ]
            frame_pn = tuple(merge_across_planes(pooled, config.merge_iou_threshold))
        cells.append(frame_cells)
        pronuclei.append(frame_pn)

    frames = tuple(
        FrameRecord(
            time_minutes=movie.frames[i].time_minutes,
            roi=rois[i],
            roi_fallback=fallbacks[i],
            seg_map=seg_maps[i],
            fragmentation_score=frag_scores[i],
            stage_probs=rows[i],
            argmax_class=argmaxes[i],
            decoded_class=decoded[i],
            excluded=excluded[i],
            cells=cells[i],
            pronuclei=pronuclei[i],
        )
        for i in range(n)
    )
    result = PipelineResult(
        embryo_id=movie.embryo_id, config=config, gate=gate, frames=frames
    )
    if config.use_dp:
        _check_monotone(result)
    return result


def _check_monotone(result: PipelineResult) -> None:
    kept = [
        int(f.decoded_class)
        for f in result.frames
        if f.excluded is False and f.decoded_class is not None
    ]
    if any(b < a for a, b in zip(kept, kept[1:])):
        raise EmbryoMetricsError(
            "internal error: decoded trajectory is not non-decreasing"
        )


def evaluate_run(
    result: PipelineResult, truth: GroundTruth, config: PipelineConfig
) -> EvaluationReport:
    """Score one pipeline result against ground truth.

    Stage and detection blocks are absent for gated-out embryos; the
    pronucleus (or cell) block is absent when the truth contains no such
    instances anywhere in the movie.
    """
    if result.embryo_id != truth.embryo_id:
        raise FrameMismatchError(
            f"result is for {result.embryo_id!r}, truth for {truth.embryo_id!r}"
        )
    if len(result.frames) != len(truth.stages):
        raise FrameMismatchError(
            f"result has {len(result.frames)} frames, truth {len(truth.stages)}"
        )

    pred_labels = np.concatenate(
        [f.seg_map.labels.ravel() for f in result.frames]
    )
    truth_labels = np.concatenate([m.labels.ravel() for m in truth.seg_maps])
    overall, per_class = pixel_accuracy(pred_labels, truth_labels)
    segmentation = SegmentationBlock(
        overall=overall, per_class=per_class, n_frames=len(result.frames)
    )

    preds = [f.fragmentation_score.value for f in result.frames]
    mad, agreement = fragmentation_metrics(
        preds, list(truth.fragmentation_grades), config.fragmentation_threshold
    )
    fragmentation = FragmentationBlock(
        mad=mad, agreement=agreement, n_frames=len(result.frames)
    )

    stage_block = None
    cells_block = None
    pn_block = None
    if result.gate.low_fragmentation:
        decoded = [f.decoded_class for f in result.frames]
        accuracy, confusion = stage_metrics(decoded, list(truth.stages))
        stage_block = StageBlock(
            accuracy=accuracy,
            confusion={c: tuple(row) for c, row in confusion.items()},
            n_frames=len(result.frames),
        )
        cells_block = _detection_block(
            [f.cells or () for f in result.frames], list(truth.cell_masks), config
        )
        pn_block = _detection_block(
            [f.pronuclei or () for f in result.frames],
            list(truth.pronucleus_masks),
            config,
        )

    return EvaluationReport(
        embryo_id=result.embryo_id,
        low_fragmentation=result.gate.low_fragmentation,
        segmentation=segmentation,
        fragmentation=fragmentation,
        stage=stage_block,
        cells=cells_block,
        pronuclei=pn_block,
    )


def _detection_block(preds_per_frame, truths_per_frame, config) -> DetectionBlock | None:
    n_preds = sum(len(p) for p in preds_per_frame)
    n_truths = sum(len(t) for t in truths_per_frame)
    if n_truths == 0 and n_preds == 0:
        return None
    try:
        mean_ap = mean_average_precision(preds_per_frame, truths_per_frame)
    except NoTruthsError:
        return None
    n_matched = 0
    ratios: list[float] = []
    for preds, truths in zip(preds_per_frame, truths_per_frame):
        match = match_instances(preds, truths, config.match_iou_threshold)
        n_matched += match.n_matched
        ratios.extend(
            preds[i].mask.area / truths[j].area for i, j, _ in match.pairs
        )
    precision = n_matched / n_preds if n_preds > 0 else None
    recall = n_matched / n_truths if n_truths > 0 else None
    if ratios:
        arr = np.asarray(ratios)
        ratio_mean = float(arr.mean())
        within = float((np.abs(arr - 1.0) <= 0.17).mean())
    else:
        ratio_mean = None
        within = None
    return DetectionBlock(
        precision=precision,
        recall=recall,
        mean_ap=mean_ap,
        n_predictions=n_preds,
        n_truths=n_truths,
        n_matched=n_matched,
        area_ratio_mean=ratio_mean,
        area_ratio_fraction_within=within,
    )


# ---------------------------------------------------------------------------
# Result serialization


def result_to_obj(result: PipelineResult) -> dict:
    frames = []
    for f in result.frames:
        frames.append(
            {
                "t": f.time_minutes,
                "roi": {
                    "x": f.roi.x,
                    "y": f.roi.y,
                    "side": f.roi.side,
                    "center": list(f.roi.center),
                    "fallback": f.roi_fallback,
                },
                "seg_map": serialize.seg_map_to_obj(f.seg_map),
                "fragmentation_score": f.fragmentation_score.value,
                "stage_probs": None
                if f.stage_probs is None
                else [float(x) for x in f.stage_probs],
                "argmax_class": None if f.argmax_class is None else f.argmax_class.token,
                "decoded_class": None
                if f.decoded_class is None
                else f.decoded_class.token,
                "excluded": f.excluded,
                "cells": None
                if f.cells is None
                else [serialize.candidate_to_obj(c) for c in f.cells],
                "pronuclei": None
                if f.pronuclei is None
                else [serialize.candidate_to_obj(c) for c in f.pronuclei],
            }
        )
    return {
        "format_version": serialize.FORMAT_VERSION,
        "kind": "pipeline_result",
        "embryo_id": result.embryo_id,
        "config": result.config.to_obj(),
        "gate": {
            "embryo_score": result.gate.embryo_score.value,
            "low_fragmentation": result.gate.low_fragmentation,
            "threshold": result.gate.threshold,
        },
        "frames": frames,
    }


def result_from_obj(obj: Mapping) -> PipelineResult:
    from .errors import FormatError

    if obj.get("kind") != "pipeline_result" or obj.get("format_version") != serialize.FORMAT_VERSION:
        raise FormatError("not a pipeline_result file")
    config = PipelineConfig.from_obj(obj["config"])
    gate = GateDecision(
        embryo_score=FragmentationScore(obj["gate"]["embryo_score"]),
        low_fragmentation=bool(obj["gate"]["low_fragmentation"]),
        threshold=float(obj["gate"]["threshold"]),
    )
    frames = []
    for f in obj["frames"]:
        roi = Roi(
            x=f["roi"]["x"],
            y=f["roi"]["y"],
            side=f["roi"]["side"],
            center=tuple(f["roi"]["center"]),
        )
        frames.append(
            FrameRecord(
                time_minutes=float(f["t"]),
                roi=roi,
                roi_fallback=bool(f["roi"]["fallback"]),
                seg_map=serialize.seg_map_from_obj(f["seg_map"]),
                fragmentation_score=FragmentationScore(f["fragmentation_score"]),
                stage_probs=None
                if f["stage_probs"] is None
                else np.asarray(f["stage_probs"], dtype=np.float64),
                argmax_class=None
                if f["argmax_class"] is None
                else StageClass.from_token(f["argmax_class"]),
                decoded_class=None
                if f["decoded_class"] is None
                else StageClass.from_token(f["decoded_class"]),
                excluded=f["excluded"],
                cells=None
                if f["cells"] is None
                else tuple(serialize.candidate_from_obj(c) for c in f["cells"]),
                pronuclei=None
                if f["pronuclei"] is None
                else tuple(serialize.candidate_from_obj(c) for c in f["pronuclei"]),
            )
        )
    return PipelineResult(
        embryo_id=str(obj["embryo_id"]),
        config=config,
        gate=gate,
        frames=tuple(frames),
    )
