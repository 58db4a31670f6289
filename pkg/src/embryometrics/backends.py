"""Pluggable model backends.

The pipeline pulls five kinds of per-frame outputs from a
:class:`BackendSuite`: zona segmentation, fragmentation scores, stage
probabilities, and cell / pronucleus candidates. Two suites ship with
the package: a synthetic suite that renders outputs from ground truth
(with configurable noise), and a file suite that replays precomputed
outputs from disk. Both are deterministic lookups, so memoization and
re-runs are safe.

Backends return candidates in full-image coordinates; the ROI is passed
for context (a real model would crop and resize with it) but no
resampling happens here.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .geometry import Roi
from .model import EmbryoMovie, InstanceCandidate, SegmentationMap
from .serialize import read_backend_tables
from .synth import GroundTruth, SynthConfig, render_model_outputs


class ZonaSegmenter(ABC):
    @abstractmethod
    def segment(
        self, movie: EmbryoMovie, frame: int, plane: int
    ) -> SegmentationMap: ...


class FragmentationScorer(ABC):
    @abstractmethod
    def score(
        self, movie: EmbryoMovie, frame: int, plane: int, roi: Roi
    ) -> float: ...


class StageClassifier(ABC):
    @abstractmethod
    def probabilities(
        self, movie: EmbryoMovie, frame: int, roi: Roi
    ) -> np.ndarray: ...


class InstanceDetector(ABC):
    @abstractmethod
    def detect(
        self, movie: EmbryoMovie, frame: int, plane: int, roi: Roi
    ) -> tuple[InstanceCandidate, ...]: ...


@dataclass(frozen=True)
class BackendSuite:
    """The five model handles the pipeline runs on."""

    segmenter: ZonaSegmenter
    fragmentation: FragmentationScorer
    stage: StageClassifier
    cells: InstanceDetector
    pronuclei: InstanceDetector


class _TableSegmenter(ZonaSegmenter):
    def __init__(self, table: Mapping[tuple[int, int], SegmentationMap]):
        self._table = dict(table)

    def segment(self, movie, frame, plane):
        return self._table[(frame, plane)]


class _TableFragmentation(FragmentationScorer):
    def __init__(self, table: Mapping[tuple[int, int], float]):
        self._table = dict(table)

    def score(self, movie, frame, plane, roi):
        return self._table[(frame, plane)]


class _TableStage(StageClassifier):
    def __init__(self, table: Mapping[int, np.ndarray]):
        self._table = dict(table)

    def probabilities(self, movie, frame, roi):
        return self._table[frame]


class _TableDetector(InstanceDetector):
    def __init__(self, table: Mapping[tuple[int, int], tuple[InstanceCandidate, ...]]):
        self._table = dict(table)

    def detect(self, movie, frame, plane, roi):
        # No line in the table means the detector found nothing there.
        return self._table.get((frame, plane), ())


def suite_from_tables(
    seg: Mapping, frag: Mapping, stage: Mapping, cells: Mapping, pronuclei: Mapping
) -> BackendSuite:
    return BackendSuite(
        segmenter=_TableSegmenter(seg),
        fragmentation=_TableFragmentation(frag),
        stage=_TableStage(stage),
        cells=_TableDetector(cells),
        pronuclei=_TableDetector(pronuclei),
    )


def synth_backend_suite(truth: GroundTruth, config: SynthConfig) -> BackendSuite:
    """Render all model outputs for the movie once and serve lookups."""
    rendered = render_model_outputs(truth, config)
    mid = truth.plane_count // 2
    seg = {(i, mid): m for i, m in enumerate(rendered.seg_maps)}
    frag = {
        (i, plane): score
        for i, scores in enumerate(rendered.fragmentation)
        for plane, score in scores.items()
    }
    stage = {i: vec for i, vec in enumerate(rendered.stage_probs)}
    cells = {
        (i, plane): cands
        for i, planes in enumerate(rendered.cells)
        for plane, cands in planes.items()
    }
    pronuclei = {
        (i, plane): cands
        for i, planes in enumerate(rendered.pronuclei)
        for plane, cands in planes.items()
    }
    return suite_from_tables(seg, frag, stage, cells, pronuclei)


def file_backend_suite(bundle_dir: Path | str) -> BackendSuite:
    """Replay precomputed outputs from a bundle directory.

    Accepts either the bundle directory (containing ``backend/``) or
    the backend directory itself.
    """
    d = Path(bundle_dir)
    if (d / "backend").is_dir():
        d = d / "backend"
    tables = read_backend_tables(d)
    return suite_from_tables(
        tables["seg"],
        tables["frag"],
        tables["stage"],
        tables["cells"],
        tables["pronuclei"],
    )
