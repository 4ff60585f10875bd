import numpy as np
import pytest

from conftest import gaussian_blobs
from uvcl.engine import (
    ContinualLearner,
    EngineConfig,
    evaluate_after_task,
    rbf_novelty,
    run_stream,
    run_task_kde,
    run_task_rbf,
)
from uvcl.errors import ConfigError, DataError
from uvcl.head import TrainConfig, novelty_rbf_many
from uvcl.ingest import SyntheticSpec, TaskBatch, generate_synthetic_stream, generate_test_set
from uvcl.kde import find_modes
from uvcl.registry import Registry

CENTERS = np.array([[0.0, 0.0, 0.0], [12.0, 0.0, 0.0], [0.0, 12.0, 0.0], [0.0, 0.0, 12.0]])


def _batch(rng, k, centers, n_per=40, std=0.5):
    x, y = gaussian_blobs(rng, centers, n_per, std)
    return TaskBatch(k, x, y)


def _stream_spec(**kw):
    base = dict(num_classes=6, dim=8, separation=20.0, class_stddev=1.0, tasks=3,
                examples_per_task=120, seed=2, test_examples_per_class=20)
    base.update(kw)
    return SyntheticSpec.from_dict(base)


class TestConfig:
    @pytest.mark.parametrize("kw", [{"bandwidth": 0}, {"bandwidth": 1, "variant": "x"},
                                    {"bandwidth": 1, "theta2": 0}, {"bandwidth": 1, "buffer_capacity": -1}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            EngineConfig(**kw)

    def test_theta2_synced(self):
        assert EngineConfig(bandwidth=1, theta2=0.7).train.theta2 == 0.7


class TestKDEVariant:
    def test_task1_three_clusters(self, rng):
        reg = Registry(3, 20)
        batch = _batch(rng, 1, CENTERS[:3])
        cfg = EngineConfig(bandwidth=1.5, variant="kde")
        report = run_task_kde(reg, batch.without_labels(), cfg)
        oracle = find_modes(batch.features, 1.5)
        assert report.L_k == len(oracle) == 3
        c = reg.centers()
        expected = max(np.linalg.norm(a - b) for a in c for b in c)
        assert reg.theta1 == expected

    def test_resampled_task_no_growth(self, rng):
        reg = Registry(3, 20)
        cfg = EngineConfig(bandwidth=1.5, variant="kde")
        run_task_kde(reg, _batch(rng, 1, CENTERS[:3]).without_labels(), cfg)
        report = run_task_kde(reg, _batch(rng, 2, CENTERS[:3]).without_labels(), cfg)
        assert report.L_k == 3

    def test_fourth_gaussian(self, rng):
        reg = Registry(3, 20)
        cfg = EngineConfig(bandwidth=1.5, variant="kde")
        run_task_kde(reg, _batch(rng, 1, CENTERS[:3]).without_labels(), cfg)
        report = run_task_kde(reg, _batch(rng, 2, CENTERS).without_labels(), cfg)
        assert report.L_k == 4

    def test_theta1_fallback_single_cluster(self, rng):
        reg = Registry(3, 20)
        run_task_kde(reg, _batch(rng, 1, CENTERS[:1]).without_labels(), EngineConfig(bandwidth=1.5, variant="kde"))
        assert reg.theta1 == 3.0 and reg.theta1_fallback

    def test_memory_bound(self, rng):
        reg = Registry(3, 7)
        cfg = EngineConfig(bandwidth=1.5, variant="kde", buffer_capacity=7)
        for k in range(1, 4):
            report = run_task_kde(reg, _batch(rng, k, CENTERS).without_labels(), cfg)
            assert report.buffered <= report.L_k * 7

    def test_dimension_mismatch(self, rng):
        reg = Registry(2, 20)
        with pytest.raises(DataError):
            run_task_kde(reg, _batch(rng, 1, CENTERS[:2]), EngineConfig(bandwidth=1.0, variant="kde"))


class TestRBFVariant:
    def _after_task1(self, rng, **kw):
        reg = Registry(3, 20)
        cfg = EngineConfig(bandwidth=1.5, **kw)
        _, head = run_task_rbf(reg, None, _batch(rng, 1, CENTERS[:2]).without_labels(), cfg)
        return reg, head, cfg

    def test_no_novel_samples(self, rng):
        reg, head, cfg = self._after_task1(rng)
        report, head2 = run_task_rbf(reg, head, _batch(rng, 2, CENTERS[:2]).without_labels(), cfg)
        assert report.novel_count == 0 and report.L_k == 2 and head2.L == 2

    def test_far_samples_all_novel(self, rng):
        reg, head, cfg = self._after_task1(rng)
        far = np.array([[60.0, 60.0, 60.0], [60.0, -60.0, 60.0]])
        batch = _batch(rng, 2, far)
        oracle = find_modes(batch.features, 1.5)
        report, head2 = run_task_rbf(reg, head, batch.without_labels(), cfg)
        assert report.novel_count == len(batch)
        assert report.L_k == 2 + len(oracle) and head2.L == report.L_k

    def test_theta2_one_everything_novel(self, rng):
        reg, head, cfg = self._after_task1(rng, theta2=1.0)
        batch = _batch(rng, 2, CENTERS[:2])
        report, _ = run_task_rbf(reg, head, batch.without_labels(), cfg)
        assert report.novel_count == len(batch)
        assert report.L_k > 2

    def test_confidence_gate_alone_stays_closed_at_two_clusters(self, rng):
        # With two clusters max softmax is at least 1/2 > theta2 = 0.3, so the
        # confidence test by itself can never flag a new class.
        reg, head, cfg = self._after_task1(rng, support_gate=False)
        x = _batch(rng, 2, CENTERS[2:]).features
        novel, _, pmax = novelty_rbf_many(head, x, 0.3)
        assert not novel.any() and pmax.min() >= 0.5
        novel2, _, _ = rbf_novelty(reg, head, x, cfg)
        assert not novel2.any()

    def test_support_gate_opens_for_new_class(self, rng):
        reg, head, cfg = self._after_task1(rng)
        x = _batch(rng, 2, CENTERS[2:]).features
        novel, _, _ = rbf_novelty(reg, head, x, cfg)
        assert novel.all()

    def test_cold_start(self, rng):
        reg, head, _ = self._after_task1(rng)
        cfg = EngineConfig(bandwidth=1.5, train=TrainConfig(warm_start=False))
        report, head2 = run_task_rbf(reg, head, _batch(rng, 2, CENTERS).without_labels(), cfg)
        assert head2.L == report.L_k == 4

    def test_head_size_mismatch(self, rng):
        reg, head, cfg = self._after_task1(rng)
        reg.new_cluster(np.zeros(3), 2)
        with pytest.raises(DataError):
            run_task_rbf(reg, head, _batch(rng, 2, CENTERS[:2]), cfg)


class TestEvaluate:
    def test_points_at_centers(self):
        reg = Registry(3, 0)
        for c in CENTERS:
            reg.new_cluster(c, 1)
        test = TaskBatch(0, CENTERS, np.array([3, 1, 0, 2]))
        assert evaluate_after_task(reg, None, test) == 1.0

    def test_single_cluster_two_classes(self):
        reg = Registry(3, 0)
        reg.new_cluster(CENTERS[0], 1)
        test = TaskBatch(0, CENTERS[:2].repeat(5, axis=0), np.repeat([0, 1], 5))
        assert evaluate_after_task(reg, None, test) == 0.5

    def test_unlabelled_test(self):
        reg = Registry(3, 0)
        reg.new_cluster(CENTERS[0], 1)
        with pytest.raises(DataError):
            evaluate_after_task(reg, None, TaskBatch(0, CENTERS))


class TestRunStream:
    @pytest.mark.parametrize("variant", ["kde", "kde_rbf"])
    def test_recovers_classes(self, variant):
        spec = _stream_spec()
        report = run_stream(spec, EngineConfig(bandwidth=3.0, variant=variant))
        assert len(report.per_task) == 3
        assert report.per_task[-1].L_k == 6
        assert report.per_task[-1].cacc >= 0.95

    def test_single_task(self):
        report = run_stream(_stream_spec(tasks=1, num_classes=2), EngineConfig(bandwidth=3.0))
        assert report.acacc == report.per_task[0].cacc
        assert report.fwf is None and report.bwf is None
        d = report.to_dict()
        assert d["fwf"] is None and d["bwf"] is None

    def test_byte_identical(self):
        cfg = EngineConfig(bandwidth=3.0)
        a = run_stream(_stream_spec(), cfg).to_json()
        b = run_stream(_stream_spec(), EngineConfig(bandwidth=3.0)).to_json()
        assert a == b

    def test_learner_never_sees_labels(self, monkeypatch):
        import uvcl.engine as eng

        seen = []
        orig = eng.run_task_rbf

        def spy(reg, head, batch, cfg):
            seen.append(batch.labels)
            return orig(reg, head, batch, cfg)

        monkeypatch.setattr(eng, "run_task_rbf", spy)
        run_stream(_stream_spec(tasks=2, num_classes=4), EngineConfig(bandwidth=3.0))
        assert seen == [None, None]

    def test_trace_csv_matches_report(self):
        report = run_stream(_stream_spec(), EngineConfig(bandwidth=3.0))
        lines = report.trace_csv().strip().splitlines()
        assert lines[0] == "task,L_k,cacc"
        for line, t in zip(lines[1:], report.per_task):
            k, L, c = line.split(",")
            assert (int(k), int(L), float(c)) == (t.task_index, t.L_k, t.cacc)

    def test_final_only_evaluation(self):
        report = run_stream(_stream_spec(), EngineConfig(bandwidth=3.0, eval_each_task=False))
        assert [t.cacc is None for t in report.per_task] == [True, True, False]
        assert report.acacc is None

    def test_timing_optional(self):
        report = run_stream(_stream_spec(tasks=1, num_classes=2), EngineConfig(bandwidth=3.0, record_timing=True))
        assert report.per_task[0].wall_time_ms > 0
        report = run_stream(_stream_spec(tasks=1, num_classes=2), EngineConfig(bandwidth=3.0))
        assert report.per_task[0].wall_time_ms is None

    def test_list_stream_with_test(self):
        spec = _stream_spec()
        report = run_stream(generate_synthetic_stream(spec), EngineConfig(bandwidth=3.0), generate_test_set(spec))
        assert report.per_task[-1].cacc >= 0.95

    def test_empty_stream(self):
        with pytest.raises(DataError):
            run_stream([], EngineConfig(bandwidth=1.0))

    def test_memory_bound_every_task(self):
        learner = ContinualLearner(EngineConfig(bandwidth=3.0, buffer_capacity=5), 8)
        for batch in generate_synthetic_stream(_stream_spec()):
            report = learner.learn(batch)
            assert learner.registry.buffered_count() <= report.L_k * 5
