import pytest

from embryometrics.errors import (
    EmptyInputError,
    PlaneCountError,
    WrongArityError,
)
from embryometrics.gating import (
    Detector,
    average_fragmentation,
    gate_embryo,
    middle_planes,
    route_frame,
)
from embryometrics.model import FragmentationScore, StageClass

C = StageClass


def scores(*values):
    return [FragmentationScore(v) for v in values]


class TestAverageFragmentation:
    def test_mean(self):
        assert average_fragmentation(scores(0.2, 0.3, 0.4)).value == pytest.approx(0.3)

    def test_idempotent_on_equal_scores(self):
        assert average_fragmentation(scores(1.7, 1.7, 1.7)).value == 1.7

    def test_high_mean(self):
        assert average_fragmentation(scores(3.0, 3.0, 2.4)).value == pytest.approx(2.8)

    def test_wrong_arity(self):
        with pytest.raises(WrongArityError):
            average_fragmentation(scores(1.0, 2.0))

    def test_bounded_by_inputs(self, rng):
        for _ in range(50):
            vals = rng.uniform(0, 3, size=3)
            out = average_fragmentation(scores(*vals)).value
            assert min(vals) <= out <= max(vals)


class TestMiddlePlanes:
    def test_seven_planes(self):
        assert middle_planes(7) == (2, 3, 4)

    def test_three_planes(self):
        assert middle_planes(3) == (0, 1, 2)

    def test_even_count_rejected(self):
        with pytest.raises(PlaneCountError):
            middle_planes(4)

    def test_too_few_rejected(self):
        with pytest.raises(PlaneCountError):
            middle_planes(1)


class TestGateEmbryo:
    def test_low_score_passes(self):
        decision = gate_embryo(scores(*[0.26] * 5))
        assert decision.low_fragmentation
        assert decision.embryo_score.value == pytest.approx(0.26)

    def test_high_score_gated(self):
        decision = gate_embryo(scores(*[2.46] * 5))
        assert not decision.low_fragmentation

    def test_even_count_uses_middle_mean_and_boundary_is_high(self):
        decision = gate_embryo(scores(1.4, 1.6))
        assert decision.embryo_score.value == pytest.approx(1.5)
        assert not decision.low_fragmentation  # score == threshold is high

    def test_median_is_robust_to_one_outlier(self):
        decision = gate_embryo(scores(0.2, 0.3, 3.0))
        assert decision.low_fragmentation

    def test_order_invariant(self, rng):
        vals = list(rng.uniform(0, 3, size=9))
        base = gate_embryo(scores(*vals))
        for _ in range(5):
            rng.shuffle(vals)
            assert gate_embryo(scores(*vals)) == base

    def test_empty_input(self):
        with pytest.raises(EmptyInputError):
            gate_embryo([])

    def test_custom_threshold(self):
        assert gate_embryo(scores(1.0), threshold=0.5).low_fragmentation is False
        assert gate_embryo(scores(1.0), threshold=1.5).low_fragmentation is True

    def test_mean_aggregation(self):
        skewed = scores(1.0, 1.0, 1.0, 3.0, 3.0)  # median 1.0, mean 1.8
        assert gate_embryo(skewed).low_fragmentation is True
        by_mean = gate_embryo(skewed, aggregation="mean")
        assert by_mean.embryo_score.value == pytest.approx(1.8)
        assert by_mean.low_fragmentation is False

    def test_unknown_aggregation_rejected(self):
        from embryometrics.errors import ValidationError

        with pytest.raises(ValidationError):
            gate_embryo(scores(1.0), aggregation="mode")


class TestRouteFrame:
    def test_one_cell_gets_both_detectors(self):
        assert route_frame(C.CELL_1) == {Detector.CELL, Detector.PRONUCLEUS}

    def test_mid_cleavage_gets_cell_only(self):
        assert route_frame(C.CELL_5) == {Detector.CELL}

    def test_blastocyst_gets_none(self):
        assert route_frame(C.BLASTOCYST) == frozenset()

    def test_full_routing_table(self):
        for c in StageClass:
            routed = route_frame(c)
            assert (Detector.PRONUCLEUS in routed) == (c == C.CELL_1)
            assert (Detector.CELL in routed) == (
                C.CELL_1 <= c <= C.CELL_8
            )
