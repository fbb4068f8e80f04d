import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings, strategies as st

from mmdial.builder import Instance
from mmdial.calibrate import (
    AnnotationRecord,
    calibrate,
    combination_label,
    correlation_matrix,
    correlation_report,
    filter_instances,
    interpolate_threshold,
    load_annotations,
    parse_combination_label,
    report_as_dict,
    sample_for_annotation,
    spearman_rho,
    thresholds_from_dict,
    write_annotations,
)
from mmdial.corpus import Turn
from mmdial.reference import REFERENCE_SPEARMAN, REFERENCE_THRESHOLDS

CONTEXT = (Turn(0, "Look at this."),)


def make_instance(n, sim, dsrc="daily", isrc="coco", split="train"):
    return Instance(
        instance_id=f"d{n}#1#im{n}",
        dialogue_id=f"d{n}",
        dialogue_source=dsrc,
        image_source=isrc,
        split=split,
        context_turns=CONTEXT,
        target_sentence=f"Target sentence {n}.",
        image_id=f"im{n}",
        similarity=float(sim),
        next_sentence=None,
    )


def spread_instances(count, lo=0.2, hi=1.0, **kw):
    sims = np.linspace(lo, hi, count)
    return [make_instance(n, sims[n], **kw) for n in range(count)]


def rank_pearson_oracle(x, y):
    """Independent oracle: scipy average ranks, then numpy Pearson."""
    rx = scipy.stats.rankdata(x, method="average")
    ry = scipy.stats.rankdata(y, method="average")
    return float(np.corrcoef(rx, ry)[0, 1])


class TestSampleForAnnotation:
    def test_300_instances_ten_by_thirty(self):
        sample = sample_for_annotation(spread_instances(300), seed=5)
        assert len(sample.segments) == 10
        all_ids = [iid for seg in sample.segments for iid in seg.instance_ids]
        assert all(len(seg.instance_ids) == 30 for seg in sample.segments)
        assert len(set(all_ids)) == 300

    def test_ten_instances_fully_sampled(self):
        sample = sample_for_annotation(spread_instances(10), seed=5)
        assert [len(seg.instance_ids) for seg in sample.segments] == [1] * 10

    def test_remainder_goes_to_lowest_segments(self):
        sample = sample_for_annotation(spread_instances(1003), seed=5, per_segment=2000)
        sizes = [len(seg.instance_ids) for seg in sample.segments]
        assert sizes == [101, 101, 101] + [100] * 7

    def test_deterministic_for_fixed_seed(self):
        instances = spread_instances(1000)
        a = sample_for_annotation(instances, seed=7)
        b = sample_for_annotation(instances, seed=7)
        assert a == b

    def test_bounds_depend_only_on_data(self):
        instances = spread_instances(1000)
        a = sample_for_annotation(instances, seed=1)
        b = sample_for_annotation(instances, seed=2)
        assert [(s.low, s.high) for s in a.segments] == [(s.low, s.high) for s in b.segments]
        assert a.segments != b.segments  # different draws

    def test_segments_partition_by_similarity(self):
        instances = spread_instances(100)
        sample = sample_for_annotation(instances, seed=3)
        for prev, cur in zip(sample.segments, sample.segments[1:]):
            assert prev.high <= cur.low

    def test_errors(self):
        with pytest.raises(ValueError, match="at least 10"):
            sample_for_annotation(spread_instances(9), seed=1)
        mixed = spread_instances(10) + spread_instances(10, isrc="flickr")
        with pytest.raises(ValueError, match="multiple combinations"):
            sample_for_annotation(mixed, seed=1)


class TestSpearman:
    def test_monotone_is_one(self):
        x = [1.0, 2.0, 3.0, 4.0, 5.0]
        assert spearman_rho(x, [v * v for v in x]) == pytest.approx(1.0, abs=1e-15)

    def test_reverse_is_minus_one(self):
        x = [1.0, 2.0, 3.0, 4.0]
        assert spearman_rho(x, x[::-1]) == pytest.approx(-1.0, abs=1e-15)

    def test_tied_example_matches_oracle(self):
        x, y = [1, 2, 2, 4], [10, 20, 30, 40]
        got = spearman_rho(x, y)
        assert got == pytest.approx(rank_pearson_oracle(x, y), abs=1e-12)
        assert got == pytest.approx(0.9486832980505138, abs=1e-12)  # 3/sqrt(10)

    def test_matches_scipy(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            n = int(rng.integers(3, 50))
            x = rng.integers(0, 8, size=n).astype(float)
            y = rng.integers(0, 8, size=n).astype(float)
            if np.all(x == x[0]) or np.all(y == y[0]):
                continue
            assert spearman_rho(x, y) == pytest.approx(
                float(scipy.stats.spearmanr(x, y).statistic), abs=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError, match="mismatch"):
            spearman_rho([1, 2], [1, 2, 3])
        with pytest.raises(ValueError, match="at least 2"):
            spearman_rho([1], [1])
        with pytest.raises(ValueError, match="constant"):
            spearman_rho([2, 2, 2], [1, 2, 3])

    @settings(max_examples=100)
    @given(st.lists(st.integers(-50, 50), min_size=2, max_size=50),
           st.lists(st.integers(-50, 50), min_size=2, max_size=50))
    def test_properties(self, x, y):
        n = min(len(x), len(y))
        x, y = x[:n], y[:n]
        if len(set(x)) < 2 or len(set(y)) < 2:
            return
        rho = spearman_rho(x, y)
        assert -1.0 - 1e-12 <= rho <= 1.0 + 1e-12
        assert rho == spearman_rho(y, x)
        # strictly monotone transforms leave ranks, hence rho, unchanged
        assert spearman_rho([np.exp(v / 10) for v in x], [v ** 3 for v in y]) == rho


class TestInterpolateThreshold:
    def test_rising_curve(self):
        got = interpolate_threshold([(0.2, 1.0), (0.4, 2.5), (0.6, 3.0)], 2.0)
        assert got == pytest.approx(1 / 3, abs=1e-9)  # 0.2 + (2-1)/(2.5-1)*0.2

    def test_curve_below_target(self):
        assert interpolate_threshold([(0.2, 1.0), (0.4, 1.5)], 2.0) is None

    def test_nonmonotone_takes_largest_crossing(self):
        got = interpolate_threshold([(0.2, 2.5), (0.4, 1.5), (0.6, 2.5)], 2.0)
        assert got == pytest.approx(0.5, abs=1e-9)

    def test_whole_curve_above_returns_first_sim(self):
        assert interpolate_threshold([(0.15, 2.5), (0.4, 4.0)], 2.0) == 0.15

    def test_exact_touch_counts_as_crossing(self):
        assert interpolate_threshold([(0.2, 1.0), (0.4, 2.0)], 2.0) == pytest.approx(0.4)

    def test_errors(self):
        with pytest.raises(ValueError, match="2 curve points"):
            interpolate_threshold([(0.2, 1.0)], 2.0)
        with pytest.raises(ValueError, match="ascending"):
            interpolate_threshold([(0.4, 1.0), (0.2, 2.0)], 2.0)


class TestAnnotationRecords:
    def test_range_validation(self):
        AnnotationRecord("i", "a", 1, 3, 5, 4)
        AnnotationRecord("i", "a", 2, 2, 3)
        with pytest.raises(ValueError, match="q1"):
            AnnotationRecord("i", "a", 4, 2, 3)
        with pytest.raises(ValueError, match="q3"):
            AnnotationRecord("i", "a", 1, 2, 6)
        with pytest.raises(ValueError, match="q4"):
            AnnotationRecord("i", "a", 1, 2, 3, 5)

    def test_csv_roundtrip(self, tmp_path):
        records = [
            AnnotationRecord("i1", "a1", 1, 2, 3, 4),
            AnnotationRecord("i1", "a2", 3, 3, 5, None),
            AnnotationRecord("i2", "a1", 2, 1, 1, 2),
        ]
        path = tmp_path / "ann.csv"
        write_annotations(path, records)
        assert load_annotations(path) == records

    def test_duplicate_pair_rejected(self, tmp_path):
        path = tmp_path / "ann.csv"
        path.write_text(
            "instance_id,annotator_id,q1,q2,q3,q4\ni,a,1,1,1,\ni,a,2,2,2,\n",
            encoding="utf-8")
        with pytest.raises(ValueError, match="duplicate"):
            load_annotations(path)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "ann.csv"
        path.write_text("who,what\n1,2\n", encoding="utf-8")
        with pytest.raises(ValueError, match="header"):
            load_annotations(path)


def proportional_q3_annotations(instances, annotators=10):
    """Mean q3 per instance approximates 5 * similarity (integer mixture)."""
    records = []
    for inst in instances:
        value = 5.0 * inst.similarity
        base = int(np.floor(value))
        high = int(round((value - base) * annotators))
        for a in range(annotators):
            q3 = min(base + 1, 5) if a < high else max(min(base, 5), 1)
            records.append(AnnotationRecord(inst.instance_id, f"a{a}", 1, 1, q3))
    return records


class TestCalibrate:
    def test_shipped_config_file_matches_constants(self):
        import json
        from pathlib import Path
        config = Path(__file__).resolve().parent.parent / "configs" / "reference_thresholds.json"
        loaded = thresholds_from_dict(json.loads(config.read_text(encoding="utf-8")))
        assert loaded == REFERENCE_THRESHOLDS

    def test_reference_thresholds_loadable_as_config(self):
        assert REFERENCE_THRESHOLDS[("persona", "coco")] == 0.546
        assert REFERENCE_THRESHOLDS[("persona", "flickr")] == 0.509
        assert REFERENCE_THRESHOLDS[("daily", "coco")] == 0.555
        assert REFERENCE_THRESHOLDS[("daily", "flickr")] == 0.619
        assert REFERENCE_THRESHOLDS[("empathetic", "coco")] == 0.623
        assert REFERENCE_THRESHOLDS[("empathetic", "flickr")] == 0.516
        flat = {combination_label(c): t for c, t in REFERENCE_THRESHOLDS.items()}
        assert thresholds_from_dict(flat) == REFERENCE_THRESHOLDS

    def test_score_proportional_to_similarity_recovers_inverse(self):
        # q3 mean tracks 5*sim, so the curve crosses 3 at sim = 0.6
        instances = spread_instances(400, lo=0.2, hi=1.0)
        annotations = proportional_q3_annotations(instances)
        report = calibrate(instances, annotations, seed=11, per_segment=40)
        cal = report.combinations[("daily", "coco")]
        assert cal.thresholds["q1"] is None and cal.thresholds["q2"] is None
        segment_width = 0.8 / 10
        assert cal.thresholds["q3"] == pytest.approx(0.6, abs=segment_width)
        assert cal.chosen == cal.thresholds["q3"]

        # with every instance sampled, the curve is computable independently:
        # segment j holds the sorted sims [40j, 40j+40)
        sims = np.sort([i.similarity for i in instances])
        scores_by_sim = {}
        for inst in instances:
            scores_by_sim[inst.similarity] = [
                r.q3 for r in annotations if r.instance_id == inst.instance_id
            ]
        expected_curve = []
        for j in range(10):
            block = sims[40 * j:40 * (j + 1)]
            flat = [score for s in block for score in scores_by_sim[s]]
            expected_curve.append((float(np.mean(block)), float(np.mean(flat))))
        got_curve = np.asarray(cal.curves["q3"])
        np.testing.assert_allclose(got_curve, np.asarray(expected_curve), atol=1e-12)
        expected_threshold = interpolate_threshold(expected_curve, 3.0)
        assert cal.thresholds["q3"] == pytest.approx(expected_threshold, abs=1e-12)

    def test_all_max_scores_choose_lowest_segment_mean(self):
        instances = spread_instances(200)
        annotations = [AnnotationRecord(i.instance_id, "a0", 3, 3, 5) for i in instances]
        report = calibrate(instances, annotations, seed=4, per_segment=20)
        cal = report.combinations[("daily", "coco")]
        lowest_mean = float(np.mean(np.sort([i.similarity for i in instances])[:20]))
        for question in ("q1", "q2", "q3"):
            assert cal.thresholds[question] == pytest.approx(lowest_mean, abs=1e-12)
        assert cal.chosen == pytest.approx(lowest_mean, abs=1e-12)

    def test_chosen_is_max_of_questions(self):
        instances = spread_instances(300)
        rng = np.random.default_rng(8)
        annotations = []
        for inst in instances:
            u = (inst.similarity - 0.2) / 0.8
            q1 = int(np.clip(round(1 + 2 * u + rng.normal(0, 0.2)), 1, 3))
            q2 = int(np.clip(round(1 + 2 * u ** 2 + rng.normal(0, 0.2)), 1, 3))
            q3 = int(np.clip(round(1 + 4 * u + rng.normal(0, 0.3)), 1, 5))
            annotations.append(AnnotationRecord(inst.instance_id, "a0", q1, q2, q3))
        report = calibrate(instances, annotations, seed=2)
        cal = report.combinations[("daily", "coco")]
        available = [t for t in cal.thresholds.values() if t is not None]
        assert available and cal.chosen == max(available)
        assert cal.kept == sum(1 for i in instances if i.similarity > cal.chosen)

    def test_unknown_instance_annotation_rejected(self):
        instances = spread_instances(20)
        bad = [AnnotationRecord("ghost#1#im", "a0", 1, 1, 1)]
        with pytest.raises(ValueError, match="unknown instance"):
            calibrate(instances, bad, seed=1)

    def test_small_combination_left_uncalibrated(self):
        instances = spread_instances(5)
        annotations = [AnnotationRecord(i.instance_id, "a0", 3, 3, 5) for i in instances]
        report = calibrate(instances, annotations, seed=1)
        cal = report.combinations[("daily", "coco")]
        assert cal.chosen is None and cal.kept == cal.total == 5

    def test_report_dict_roundtrips_thresholds(self):
        instances = spread_instances(100)
        annotations = [AnnotationRecord(i.instance_id, "a0", 3, 3, 5) for i in instances]
        report = calibrate(instances, annotations, seed=3)
        payload = report_as_dict(report)
        assert payload["seed"] == 3
        extracted = thresholds_from_dict(payload)
        assert extracted[("daily", "coco")] == report.combinations[("daily", "coco")].chosen
        assert parse_combination_label("daily+coco") == ("daily", "coco")


class TestCorrelations:
    def test_matrix_and_reference_values(self):
        instances = spread_instances(120)
        rng = np.random.default_rng(5)
        annotations = []
        for inst in instances:
            u = (inst.similarity - 0.2) / 0.8
            annotations.append(AnnotationRecord(
                inst.instance_id, "a0",
                int(np.clip(round(1 + 2 * u + rng.normal(0, 0.3)), 1, 3)),
                int(np.clip(round(1 + 2 * u + rng.normal(0, 0.3)), 1, 3)),
                int(np.clip(round(1 + 4 * u + rng.normal(0, 0.5)), 1, 5)),
            ))
        matrix = correlation_matrix(instances, annotations)
        sims = [i.similarity for i in instances]
        q1 = [r.q1 for r in annotations]
        assert matrix[("similarity", "q1")] == pytest.approx(
            rank_pearson_oracle(sims, q1), abs=1e-12)
        assert matrix[("similarity", "q1")] > 0.5  # engineered positive association
        # full-scale reference matrix, context only
        assert REFERENCE_SPEARMAN[("similarity", "q1")] == 0.5893
        assert REFERENCE_SPEARMAN[("q2", "q3")] == 0.7570

    def test_report_pools_and_splits_by_combination(self):
        a = spread_instances(60, isrc="coco")
        b = [make_instance(100 + n, s, isrc="flickr")
             for n, s in enumerate(np.linspace(0.3, 0.9, 60))]
        instances = a + b
        rng = np.random.default_rng(6)
        annotations = []
        for inst in instances:
            u = min(max((inst.similarity - 0.2) / 0.8, 0.0), 1.0)
            annotations.append(AnnotationRecord(
                inst.instance_id, "a0",
                int(np.clip(round(1 + 2 * u + rng.normal(0, 0.4)), 1, 3)),
                int(np.clip(round(1 + 2 * u + rng.normal(0, 0.4)), 1, 3)),
                int(np.clip(round(1 + 4 * u + rng.normal(0, 0.6)), 1, 5)),
            ))
        report = correlation_report(instances, annotations)
        assert set(report.per_combination) == {("daily", "coco"), ("daily", "flickr")}
        assert report.pooled[("similarity", "q3")] is not None

    def test_constant_side_is_none(self):
        instances = spread_instances(30)
        annotations = [AnnotationRecord(i.instance_id, "a0", 2, 1, 3) for i in instances]
        matrix = correlation_matrix(instances, annotations)
        assert matrix[("similarity", "q1")] is None


class TestFilterInstances:
    def test_boundary_is_strict(self):
        inst = make_instance(0, 0.546, dsrc="persona")
        kept = filter_instances([inst], {("persona", "coco"): 0.546})
        assert kept == []
        above = make_instance(1, 0.5461, dsrc="persona")
        assert filter_instances([above], {("persona", "coco"): 0.546}) == [above]

    def test_threshold_minus_one_keeps_all(self):
        instances = spread_instances(50)
        kept = filter_instances(instances, {}, default=-1.0)
        assert kept == instances

    def test_missing_threshold_without_default(self):
        with pytest.raises(ValueError, match="no threshold"):
            filter_instances([make_instance(0, 0.5)], {})

    def test_count_matches_independent_filter(self):
        rng = np.random.default_rng(13)
        combos = list(REFERENCE_THRESHOLDS)
        instances = []
        for n in range(1000):
            dsrc, isrc = combos[n % len(combos)]
            instances.append(make_instance(n, rng.uniform(0.3, 0.9), dsrc=dsrc, isrc=isrc))
        kept = filter_instances(instances, REFERENCE_THRESHOLDS)
        expected = sum(  # oracle: direct comparison loop
            1 for inst in instances
            if inst.similarity > REFERENCE_THRESHOLDS[inst.combination]
        )
        assert len(kept) == expected
        assert all(i.similarity > REFERENCE_THRESHOLDS[i.combination] for i in kept)

    def test_stable_order(self):
        instances = spread_instances(20)[::-1]
        kept = filter_instances(instances, {("daily", "coco"): 0.5})
        assert kept == [i for i in instances if i.similarity > 0.5]
