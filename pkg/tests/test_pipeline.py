import numpy as np
import pytest

from pafr.errors import ContractError, DegenerateLabelsError, SchemaError
from pafr.gbdt import TrainConfig
from pafr.graph import binary_edge_labels, ground_truth_instances
from pafr.pipeline import (
    PipelineModel,
    build_instance_training_set,
    components,
    infer,
    logit_sum_vote,
    predict_boundaries,
    train_instance_stage,
    train_pipeline,
    train_semantic_stage,
)
from pafr.synth import GenConfig, generate_part

from conftest import make_part

FAST = TrainConfig(n_trees=20, max_depth=4)


@pytest.fixture(scope="module")
def trained(small_dataset):
    cfg, parts = small_dataset
    model, report = train_pipeline(parts, cfg.classes, FAST, FAST)
    return parts, model, report


class FixedProbs:
    """Boundary-model stand-in returning canned probabilities."""

    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=np.float64)

    def predict_proba(self, X):
        return self.probs[: len(X)]


class TestPredictBoundaries:
    def test_threshold_rule(self):
        g = make_part(3, [(0, 1), (1, 2)])
        y_hat, probs = predict_boundaries(FixedProbs([0.9, 0.2]), g, 0.5)
        assert y_hat.tolist() == [1, 0]
        assert probs.tolist() == [0.9, 0.2]

    def test_exact_tie_kept(self):
        g = make_part(2, [(0, 1)])
        y_hat, _ = predict_boundaries(FixedProbs([0.5]), g, 0.5)
        assert y_hat.tolist() == [1]

    def test_threshold_outside_open_interval(self):
        g = make_part(2, [(0, 1)])
        for tau in (0.0, 1.0, 1.0 + 1e-12, -0.1):
            with pytest.raises(ContractError):
                predict_boundaries(FixedProbs([0.5]), g, tau)


class TestComponents:
    def test_path_split(self):
        g = make_part(3, [(0, 1), (1, 2)])
        assert components(g, [1, 0]) == [frozenset({0, 1}), frozenset({2})]

    def test_all_dropped_singletons(self):
        g = make_part(3, [(0, 1), (1, 2)])
        assert components(g, [0, 0]) == [frozenset({0}), frozenset({1}), frozenset({2})]

    def test_all_kept_single_component(self):
        g = make_part(4, [(0, 1), (1, 2), (2, 3)])
        assert components(g, [1, 1, 1]) == [frozenset({0, 1, 2, 3})]

    def test_length_mismatch(self):
        g = make_part(2, [(0, 1)])
        with pytest.raises(ContractError):
            components(g, [1, 0])

    def test_monotone_pruning(self, small_dataset):
        # lowering tau keeps more edges, so the partition only coarsens
        _, parts = small_dataset
        rng = np.random.default_rng(0)
        for g in parts[:10]:
            probs = rng.random(g.m)
            prev = None
            for tau in (0.9, 0.7, 0.5, 0.3, 0.1):
                n_comp = len(components(g, (probs >= tau).astype(int)))
                if prev is not None:
                    assert n_comp <= prev
                prev = n_comp


class TestTrainInstanceStage:
    def test_single_instance_parts_degenerate(self):
        cfg = GenConfig(seed=1, n_parts=6, features_per_part=(0, 0))
        parts = [generate_part(cfg, i) for i in range(6)]
        with pytest.raises(DegenerateLabelsError):
            train_instance_stage(parts, FAST)

    def test_shuffled_part_order_identical_model(self, small_dataset):
        _, parts = small_dataset
        subset = parts[:12]
        a = train_instance_stage(subset, FAST)
        b = train_instance_stage(list(reversed(subset)), FAST)
        assert np.array_equal(a.calibrator.breakpoints, b.calibrator.breakpoints)
        assert np.array_equal(a.calibrator.values, b.calibrator.values)
        for ta, tb in zip(a.base.trees, b.base.trees):
            assert np.array_equal(ta.weight, tb.weight)

    def test_oof_coverage(self, small_dataset):
        _, parts = small_dataset
        model = train_instance_stage(parts[:12], FAST)
        n_edges = sum(g.m for g in parts[:12])
        assert len(model.oof_probs_raw) == n_edges
        assert np.isfinite(model.oof_probs_raw).all()


class TestSemanticStage:
    def test_row_accounting(self, small_dataset):
        _, parts = small_dataset
        X, y, n_split = build_instance_training_set(parts)
        expected = sum(len(ground_truth_instances(g)) for g in parts)
        assert len(y) == expected and len(X) == expected
        assert n_split >= 0

    def test_single_class_dataset(self):
        cfg = GenConfig(seed=2, n_parts=8, features_per_part=(0, 0))
        parts = [generate_part(cfg, i) for i in range(8)]
        model = train_semantic_stage(parts, 7, FAST)
        X, _, _ = build_instance_training_set(parts)
        assert (model.predict_class(X)[0] == 0).all()

    def test_disconnected_instance_split_and_flagged(self):
        g = make_part(3, [(0, 1), (1, 2)], inst=[0, 1, 0], cls=[1, 2, 1])
        X, y, n_split = build_instance_training_set([g])
        assert len(y) == 3  # instance 0 splits into two rows
        assert n_split == 1
        assert sorted(y.tolist()) == [1, 1, 2]


class TestInfer:
    def test_partition_invariant(self, trained):
        parts, model, _ = trained
        for g in parts[:20]:
            pred = infer(model, g)
            all_faces = sorted(f for inst in pred.instances for f in inst[0])
            assert all_faces == list(range(g.n))
            assert len(pred.edge_probs) == g.m
            for _, cls, conf in pred.instances:
                assert 0 <= cls < len(model.classes)
                assert 0.0 <= conf <= 1.0

    def test_single_face_part(self, trained):
        _, model, _ = trained
        g = generate_part(GenConfig(seed=3, n_parts=1, features_per_part=(0, 0)), 0)
        sub = make_part(1, [], header=g.header)
        pred = infer(model, sub)
        assert len(pred.instances) == 1
        assert pred.instances[0][0] == frozenset({0})

    def test_schema_mismatch_rejected(self, trained):
        _, model, _ = trained
        stale = PipelineModel(boundary=model.boundary, semantic=model.semantic,
                              threshold=model.threshold, classes=model.classes,
                              edge_schema="edge-attrs-v0")
        g = generate_part(GenConfig(seed=3, n_parts=1), 0)
        with pytest.raises(SchemaError):
            infer(stale, g)

    def test_perfect_boundary_recovers_ground_truth(self, small_dataset):
        _, parts = small_dataset
        for g in parts[:20]:
            comps = components(g, binary_edge_labels(g))
            gt = [faces for faces, _ in ground_truth_instances(g)]
            assert sorted(comps, key=min) == sorted(gt, key=min)


class TestTrainPipeline:
    def test_report_accounting(self, trained):
        parts, model, report = trained
        assert report.n_parts == len(parts)
        assert report.n_edges == sum(g.m for g in parts)
        assert report.n_instances == sum(len(ground_truth_instances(g)) for g in parts)
        assert 0.0 <= report.boundary_fraction <= 1.0
        assert 0.0 <= report.oof_ece <= 1.0
        assert model.threshold == 0.5

    def test_bad_threshold_rejected(self, small_dataset):
        cfg, parts = small_dataset
        with pytest.raises(ContractError):
            train_pipeline(parts[:12], cfg.classes, FAST, FAST, threshold=1.5)


class TestLogitSumVote:
    def test_singleton(self):
        logits = np.array([[0.0, 3.0, 1.0], [9.0, 0.0, 0.0]])
        assert logit_sum_vote(logits, {0}) == 1

    def test_two_face_sum(self):
        logits = np.array([[2.0, 0.0], [0.0, 1.0]])
        assert logit_sum_vote(logits, {0, 1}) == 0

    def test_shift_invariance_and_tie_break(self):
        logits = np.array([[1.0, 1.0], [2.0, 2.0]])
        assert logit_sum_vote(logits, {0, 1}) == 0
        assert logit_sum_vote(logits + 7.0, {0, 1}) == 0

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            logit_sum_vote(np.zeros((2, 2)), set())
