import math

import numpy as np
import pytest

from upass.deferral import (
    DeferralScore,
    explain,
    pick_threshold,
    read_scores_csv,
    retention_curve,
    score,
    write_scores_csv,
)
from upass.neighbors import build_index
from upass.refmodel import EmbeddingSet


def make_index(vectors, **attachments):
    ids = tuple(f"t{i:03d}" for i in range(len(vectors)))
    emb = EmbeddingSet(ids, np.asarray(vectors, dtype=float))
    return build_index(emb, attachments or None)


def oracle_scores(correct, metric_id="output_entropy"):
    return [
        DeferralScore(sample_id=sid, metric_id=metric_id, score=0.0 if ok else 1.0)
        for sid, ok in correct.items()
    ]


class TestOutputMetrics:
    def test_one_hot_output_is_most_certain(self):
        probs = np.array([[1.0, 0.0, 0.0]])
        (s_ent,) = score("output_entropy", ["a"], outputs=probs)
        (s_max,) = score("max_prob", ["a"], outputs=probs)
        assert s_ent.score == 0.0
        assert s_max.score == 0.0

    def test_uniform_output_entropy_is_log_classes(self):
        probs = np.full((1, 5), 0.2)
        (s,) = score("output_entropy", ["a"], outputs=probs)
        assert math.isclose(s.score, math.log(5), abs_tol=1e-12)
        assert math.isclose(s.score, 1.6094379124341003, abs_tol=1e-9)

    def test_max_prob_orientation(self):
        probs = np.array([[0.9, 0.1], [0.6, 0.4]])
        s = score("max_prob", ["a", "b"], outputs=probs)
        assert s[0].score < s[1].score


class TestNeighborMetrics:
    def test_wknn_confidence_hand_case(self):
        # neighbors at distances 1 and 3, confidences 0.9 and 0.5:
        # weights 1 and 1/3 -> weighted confidence 0.8 -> score 0.2
        index = make_index(
            np.array([[1.0, 0.0], [3.0, 0.0], [50.0, 50.0]]),
            confidence=[0.9, 0.5, 0.0],
        )
        (s,) = score(
            "wknn_confidence", ["q"], embeddings=np.array([[0.0, 0.0]]), index=index, n=2
        )
        assert abs(s.score - 0.2) < 1e-6
        assert abs(s.mean_neighbor_distance - 2.0) < 1e-12
        assert abs(s.mean_neighbor_confidence - 0.7) < 1e-12

    def test_knn_distance_is_mean_distance(self):
        index = make_index(np.array([[1.0, 0.0], [0.0, 2.0], [9.0, 9.0]]))
        (s,) = score("knn_distance", ["q"], embeddings=np.zeros((1, 2)), index=index, n=2)
        assert abs(s.score - 1.5) < 1e-12

    def test_class_distance_ratio_hand_case(self):
        # class means at distance 2, 4, 8 along one axis, n=1
        vecs = np.array([[2.0, 0.0], [-4.0, 0.0], [0.0, 8.0]])
        index = make_index(vecs, label=[0, 1, 2])
        (s,) = score(
            "class_distance_ratio", ["q"], embeddings=np.zeros((1, 2)), index=index, n=1
        )
        assert abs(s.score - 0.5) < 1e-12

    def test_class_distance_ratio_equidistant_is_one(self):
        vecs = np.array([[3.0, 0.0], [-3.0, 0.0], [0.0, 3.0]])
        index = make_index(vecs, label=[0, 1, 2])
        (s,) = score(
            "class_distance_ratio", ["q"], embeddings=np.zeros((1, 2)), index=index, n=1
        )
        assert s.score == 1.0

    def test_class_distance_ratio_names_deficient_class(self):
        vecs = np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 1.0]])
        index = make_index(vecs, label=[0, 0, 1])
        with pytest.raises(ValueError, match="class 1"):
            score("class_distance_ratio", ["q"], embeddings=np.zeros((1, 2)), index=index, n=2)

    def test_wknn_uncertainty_metrics(self):
        index = make_index(
            np.array([[1.0, 0.0], [1.0, 0.0]]),
            v_al=[0.2, 0.1],
            v_ep=[0.05, 0.15],
        )
        (s_al,) = score(
            "wknn_data_uncertainty", ["q"], embeddings=np.zeros((1, 2)), index=index, n=2
        )
        (s_ep,) = score(
            "wknn_model_uncertainty", ["q"], embeddings=np.zeros((1, 2)), index=index, n=2
        )
        assert abs(s_al.score - 0.15) < 1e-9  # equal weights
        assert abs(s_ep.score - 0.10) < 1e-9

    def test_missing_attachment_rejected(self, rng):
        index = make_index(rng.normal(size=(5, 2)))
        with pytest.raises(ValueError, match="confidence"):
            score("wknn_confidence", ["q"], embeddings=np.zeros((1, 2)), index=index, n=2)

    def test_zero_distance_guard(self):
        index = make_index(np.zeros((2, 2)), confidence=[1.0, 1.0])
        (s,) = score("wknn_confidence", ["q"], embeddings=np.zeros((1, 2)), index=index, n=2)
        assert math.isfinite(s.score)
        assert abs(s.score) < 1e-9

    def test_orientation_minimum_at_certain_cases(self, rng):
        # degenerate certainty: zero distance + neighbor confidence 1
        index = make_index(np.zeros((3, 2)), confidence=[1.0, 1.0, 1.0], v_al=[0.0] * 3, v_ep=[0.0] * 3)
        for metric in ("knn_distance", "wknn_confidence", "wknn_data_uncertainty", "wknn_model_uncertainty"):
            (s,) = score(metric, ["q"], embeddings=np.zeros((1, 2)), index=index, n=3)
            assert s.score <= 1e-9


class TestRetentionCurve:
    def test_full_retention_is_overall_accuracy(self, rng):
        correct = {f"s{i}": bool(rng.integers(0, 2)) for i in range(40)}
        scores = [
            DeferralScore(sid, "max_prob", float(rng.random())) for sid in correct
        ]
        curve = retention_curve(scores, correct, grid=[1.0])
        assert curve.points[-1].accuracy == np.mean(list(correct.values()))

    def test_oracle_score_perfect_prefix(self, rng):
        correct = {f"s{i:03d}": i % 4 != 0 for i in range(60)}  # 75% accuracy
        scores = oracle_scores(correct)
        grid = [round(0.05 * k, 2) for k in range(1, 21)]
        curve = retention_curve(scores, correct, grid)
        overall = np.mean(list(correct.values()))
        for p in curve.points:
            if p.retained_fraction <= overall:
                assert p.accuracy == 1.0

    def test_constant_scores_tie_break_order(self):
        correct = {"a": True, "b": False, "c": True, "d": False}
        scores = [DeferralScore(sid, "max_prob", 0.5) for sid in correct]
        curve = retention_curve(scores, correct, grid=[0.25, 0.5, 0.75, 1.0])
        # ranking falls back to ascending sample_id: a, b, c, d
        assert [p.accuracy for p in curve.points] == [1.0, 0.5, 2 / 3, 0.5]

    def test_most_uncertain_view(self):
        correct = {"a": True, "b": False}
        scores = [DeferralScore("a", "m", 0.0), DeferralScore("b", "m", 1.0)]
        certain = retention_curve(scores, correct, grid=[0.5, 1.0])
        uncertain = retention_curve(scores, correct, grid=[0.5, 1.0], most_uncertain=True)
        assert certain.points[0].accuracy == 1.0
        assert uncertain.points[0].accuracy == 0.0

    def test_empty_inputs_rejected(self):
        with pytest.raises(ValueError, match="no scores"):
            retention_curve([], {}, grid=[1.0])

    def test_strictly_increasing_fractions(self, rng):
        correct = {f"s{i}": True for i in range(10)}
        scores = [DeferralScore(sid, "m", float(rng.random())) for sid in correct]
        curve = retention_curve(scores, correct, grid=[0.5, 0.1, 0.5, 1.0])
        fracs = [p.retained_fraction for p in curve.points]
        assert fracs == sorted(set(fracs))


class TestPickThreshold:
    def test_already_satisfied_target(self, rng):
        correct = {f"s{i}": True for i in range(20)}
        scores = [DeferralScore(sid, "m", float(rng.random())) for sid in correct]
        curve = retention_curve(scores, correct, grid=[0.5, 1.0])
        pick = pick_threshold(curve, 0.9)
        assert pick.retained_fraction == 1.0

    def test_unreachable_target(self):
        # an error is always ranked most certain
        correct = {"a": False, "b": True, "c": True}
        scores = [
            DeferralScore("a", "m", 0.0),
            DeferralScore("b", "m", 0.5),
            DeferralScore("c", "m", 1.0),
        ]
        curve = retention_curve(scores, correct, grid=[1 / 3, 2 / 3, 1.0])
        assert pick_threshold(curve, 1.0) is None

    def test_three_point_grid_case(self):
        # brute force over the three grid points: pick the largest z meeting 0.85
        from upass.deferral import CurvePoint, RetentionCurve

        curve = RetentionCurve(
            points=(
                CurvePoint(0.5, 1.0, 0.1),
                CurvePoint(0.8, 0.9, 0.2),
                CurvePoint(1.0, 0.8, 0.3),
            ),
            metric_id="m",
        )
        pick = pick_threshold(curve, 0.85)
        assert pick.retained_fraction == 0.8
        assert pick.score_threshold == 0.2

    def test_picked_accuracy_meets_target(self, rng):
        for _ in range(50):
            n = int(rng.integers(5, 50))
            correct = {f"s{i:02d}": bool(rng.integers(0, 2)) for i in range(n)}
            scores = [DeferralScore(sid, "m", float(rng.random())) for sid in correct]
            curve = retention_curve(scores, correct, grid=[k / 10 for k in range(1, 11)])
            target = float(rng.random())
            pick = pick_threshold(curve, target)
            if pick is not None:
                assert pick.accuracy >= target
            else:
                assert all(p.accuracy < target for p in curve.points)

    def test_one_grid_step_more_violates_target_or_full_retention(self, rng):
        grid = [k / 10 for k in range(1, 11)]
        for _ in range(50):
            n = int(rng.integers(5, 60))
            correct = {f"s{i:02d}": bool(rng.integers(0, 2)) for i in range(n)}
            scores = [DeferralScore(sid, "m", float(rng.random())) for sid in correct]
            curve = retention_curve(scores, correct, grid)
            target = float(rng.random())
            pick = pick_threshold(curve, target)
            if pick is None or pick.retained_fraction == 1.0:
                continue
            larger = [p for p in curve.points if p.retained_fraction > pick.retained_fraction]
            assert all(p.accuracy < target for p in larger)


class TestProperties:
    def test_oracle_score_dominates_any_other_score(self, rng):
        grid = [k / 20 for k in range(1, 21)]
        for _ in range(30):
            n = int(rng.integers(8, 60))
            correct = {f"s{i:02d}": bool(rng.random() < 0.7) for i in range(n)}
            oracle = oracle_scores(correct)
            other = [DeferralScore(sid, "m", float(rng.random())) for sid in correct]
            oracle_curve = retention_curve(oracle, correct, grid)
            other_curve = retention_curve(other, correct, grid)
            for po, px in zip(oracle_curve.points, other_curve.points):
                assert po.accuracy >= px.accuracy - 1e-12

    def test_ratio_and_knn_order_invariant_under_scaling(self, rng):
        vecs = rng.normal(size=(30, 3))
        labels = (np.arange(30) % 3).tolist()
        query = rng.normal(size=(4, 3))
        ids = [f"q{i}" for i in range(4)]
        for scale in (1.0, 0.001, 5000.0):
            index = make_index(vecs * scale, label=labels)
            ratios = score(
                "class_distance_ratio", ids, embeddings=query * scale, index=index, n=3
            )
            knn = score("knn_distance", ids, embeddings=query * scale, index=index, n=5)
            if scale == 1.0:
                base_ratios = [s.score for s in ratios]
                base_knn_rank = sorted(ids, key=lambda sid: next(x.score for x in knn if x.sample_id == sid))
            else:
                np.testing.assert_allclose([s.score for s in ratios], base_ratios, rtol=1e-9)
                rank = sorted(ids, key=lambda sid: next(x.score for x in knn if x.sample_id == sid))
                assert rank == base_knn_rank


class TestExplain:
    def _scores(self, recs, dist_by_rec, conf_by_rec, acc_by_rec, per=10):
        scores, rec_ids, correct = [], {}, {}
        k = 0
        for rid in recs:
            for j in range(per):
                sid = f"{rid}-{j:02d}"
                scores.append(
                    DeferralScore(
                        sid,
                        "wknn_confidence",
                        0.5,
                        mean_neighbor_distance=dist_by_rec[rid],
                        mean_neighbor_confidence=conf_by_rec[rid],
                    )
                )
                rec_ids[sid] = rid
                correct[sid] = j < round(acc_by_rec[rid] * per)
                k += 1
        return scores, rec_ids, correct

    def test_monotone_construction_gives_perfect_negative_correlation(self):
        recs = ["r0", "r1", "r2", "r3"]
        dist = {"r0": 1.0, "r1": 2.0, "r2": 3.0, "r3": 4.0}
        conf = {"r0": 0.9, "r1": 0.8, "r2": 0.7, "r3": 0.6}
        acc = {"r0": 1.0, "r1": 0.8, "r2": 0.6, "r3": 0.4}
        scores, rec_ids, correct = self._scores(recs, dist, conf, acc)
        report = explain(scores, rec_ids, correct)
        assert report.corr_distance[0] == pytest.approx(-1.0, abs=1e-12)
        assert report.corr_confidence[0] == pytest.approx(1.0, abs=1e-12)

    def test_too_few_recordings_notice(self):
        scores, rec_ids, correct = self._scores(
            ["r0", "r1"], {"r0": 1.0, "r1": 2.0}, {"r0": 0.9, "r1": 0.8}, {"r0": 1.0, "r1": 0.5}
        )
        report = explain(scores, rec_ids, correct)
        assert report.corr_distance is None
        assert "fewer than 3" in report.notice

    def test_requires_neighbor_metric(self):
        scores = [DeferralScore("a", "output_entropy", 0.5)]
        with pytest.raises(ValueError, match="neighbor-based"):
            explain(scores, {"a": "r0"}, {"a": True})

    def test_permuted_accuracy_kills_correlation(self, rng):
        recs = [f"r{i}" for i in range(12)]
        dist = {rid: float(i) for i, rid in enumerate(recs)}
        conf = {rid: 0.5 for rid in recs}
        r_values = []
        for _ in range(30):
            acc = {rid: float(rng.random()) for rid in recs}
            scores, rec_ids, correct = self._scores(recs, dist, conf, acc, per=20)
            report = explain(scores, rec_ids, correct)
            r_values.append(report.corr_distance[0])
        assert abs(np.mean(r_values)) < 0.2

    def test_exact_permutation_pvalue(self):
        recs = ["r0", "r1", "r2", "r3", "r4"]
        dist = {"r0": 1.0, "r1": 2.0, "r2": 3.0, "r3": 4.0, "r4": 5.0}
        conf = {rid: 0.5 for rid in recs}
        acc = {"r0": 1.0, "r1": 0.9, "r2": 0.7, "r3": 0.5, "r4": 0.3}
        scores, rec_ids, correct = self._scores(recs, dist, conf, acc)
        report = explain(scores, rec_ids, correct, exact_permutation=True, permutations=500, seed=3)
        assert report.corr_distance[0] == pytest.approx(-1.0, abs=1e-12)
        assert report.corr_distance[1] < 0.05


def test_scores_csv_round_trip(tmp_path):
    scores = [
        DeferralScore("a", "wknn_confidence", 0.25, 1.5, 0.75),
        DeferralScore("b", "output_entropy", 0.9),
    ]
    path = tmp_path / "scores.csv"
    write_scores_csv(scores, path)
    assert read_scores_csv(path) == scores
