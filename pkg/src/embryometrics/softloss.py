"""Label-noise-aware stage-classification loss.

Human stage labels are imperfect, so instead of scoring a prediction
against the raw label, the log-likelihood marginalizes the model's
class probabilities through a measured label-confusion matrix:

    log p(label | model) = log sum_t q[t][label] * p(t | model)

With an identity confusion matrix this collapses to the ordinary
cross-entropy term ``log p[label]``. The confusion matrix itself is
estimated from images labeled three times each, using the majority vote
as the true class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyInputError, WrongArityError, ZeroLikelihoodError
from .model import NUM_CLASSES, ConfusionMatrix, StageClass, validate_prob_vector


@dataclass(frozen=True)
class TriplicateRecord:
    """One image labeled independently by three annotators."""

    image_id: str
    labels: tuple[StageClass, StageClass, StageClass]

    def __post_init__(self):
        labels = tuple(StageClass(l) for l in self.labels)
        if len(labels) != 3:
            raise WrongArityError(f"need exactly 3 labels, got {len(labels)}")
        object.__setattr__(self, "labels", labels)

    def majority(self) -> StageClass | None:
        """Majority-vote class, or None for a three-way tie."""
        a, b, c = self.labels
        if a == b or a == c:
            return a
        if b == c:
            return b
        return None


@dataclass(frozen=True)
class TriplicateLabelSet:
    records: tuple[TriplicateRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))


@dataclass(frozen=True)
class ConfusionEstimate:
    """Estimated confusion matrix plus bookkeeping about the input."""

    confusion: ConfusionMatrix
    records_used: int
    no_majority_count: int
    records_per_class: tuple[int, ...]  # indexed by true class


def estimate_confusion(labels: TriplicateLabelSet) -> ConfusionEstimate:
    """Estimate q[t][l] = p(label l | true class t) from triplicates.

    The majority vote of each record is taken as the true class t; the
    record's three individual labels are then counted into row t.
    Records with three distinct labels have no majority, are skipped,
    and are reported in ``no_majority_count``. Classes with no majority
    records keep an identity row (labels assumed correct absent
    evidence), so every row is stochastic.

    Raises:
        EmptyInputError: no record has a majority.
    """
    counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.float64)
    per_class = np.zeros(NUM_CLASSES, dtype=np.int64)
    skipped = 0
    for rec in labels.records:
        truth = rec.majority()
        if truth is None:
            skipped += 1
            continue
        per_class[truth] += 1
        for l in rec.labels:
            counts[truth][l] += 1.0
    used = int(per_class.sum())
    if used == 0:
        raise EmptyInputError("no records with a majority vote")
    q = np.eye(NUM_CLASSES)
    present = per_class > 0
    q[present] = counts[present] / (3.0 * per_class[present, None])
    return ConfusionEstimate(
        confusion=ConfusionMatrix(q),
        records_used=used,
        no_majority_count=skipped,
        records_per_class=tuple(int(n) for n in per_class),
    )


def soft_likelihood(
    label: StageClass,
    prediction: Sequence[float] | np.ndarray,
    confusion: ConfusionMatrix,
) -> float:
    """Pre-log likelihood: sum_t q[t][label] * prediction[t].

    Linear in the prediction vector; in [0, 1] for valid inputs.
    """
    p = validate_prob_vector(prediction)
    s = float(np.dot(confusion.q[:, int(label)], p))
    # The mathematical value is <= 1; a 13-term dot product can
    # overshoot by an ulp.
    return min(s, 1.0)


def soft_log_likelihood(
    label: StageClass,
    prediction: Sequence[float] | np.ndarray,
    confusion: ConfusionMatrix,
) -> float:
    """Log-likelihood of a (possibly noisy) label given a prediction.

    Always <= 0; equals 0 only when the label is reached with
    probability 1. Unlike cross-entropy, this stays finite when
    prediction[label] = 0, as long as some predicted class t can be
    mislabeled as `label` (q[t][label] > 0).

    Raises:
        ZeroLikelihoodError: the label is unreachable from every
            predicted class (the sum is exactly 0).
    """
    s = soft_likelihood(label, prediction, confusion)
    if s == 0.0:
        raise ZeroLikelihoodError(
            f"label {StageClass(label).token} has zero probability "
            "under every predicted class"
        )
    return math.log(s)


def mean_soft_loss(
    batch: Iterable[tuple[StageClass, Sequence[float] | np.ndarray]],
    confusion: ConfusionMatrix,
) -> float:
    """Negative mean soft log-likelihood over (label, prediction) pairs."""
    total = 0.0
    n = 0
    for label, prediction in batch:
        total += soft_log_likelihood(label, prediction, confusion)
        n += 1
    if n == 0:
        raise EmptyInputError("empty batch")
    return -total / n
