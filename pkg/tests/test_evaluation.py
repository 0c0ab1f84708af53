"""Evaluation protocols, detection rule, and report plumbing."""

import numpy as np
import pytest

from aat.attack import AttackConfig, pgd
from aat.data import Dataset
from aat.evaluation import (EvalReport, accuracy, build_mixed_set, calibrate,
                            detect, dia, eval_per_way_adv,
                            eval_standard_way_adv, evaluate, rad)
from aat.model import ThreeWayModel, mnist_backbone
from aat.tensor import Tensor


@pytest.fixture(scope="module")
def model():
    return ThreeWayModel.init(mnist_backbone(), seed=9)


@pytest.fixture(scope="module")
def dataset():
    rng = np.random.default_rng(2)
    x = rng.random((60, 1, 28, 28)).astype(np.float32)
    y = rng.integers(0, 10, size=60).astype(np.int64)
    return Dataset(x, y, split="test")


ATK = AttackConfig(norm="l2", epsilon=0.3, alpha=0.06, steps=3)


class TestAccuracy:
    def test_matches_manual_loop(self, model, dataset):
        got = accuracy(model, dataset, "standard")
        logits = model.forward_way(Tensor(dataset.images), "standard").data
        want = (logits.argmax(1) == dataset.labels).mean() * 100.0
        assert got == pytest.approx(want)

    def test_batching_invariance(self, model, dataset):
        # chunked prediction must agree with one full-batch pass
        import aat.evaluation as ev
        orig = ev._EVAL_BATCH
        try:
            ev._EVAL_BATCH = 7
            chunked = accuracy(model, dataset, "robust")
        finally:
            ev._EVAL_BATCH = orig
        assert chunked == pytest.approx(accuracy(model, dataset, "robust"))


class TestAdversarialProtocols:
    def test_per_way_oracle(self, model, dataset):
        got = eval_per_way_adv(model, dataset, ATK)
        for key, way in (("R", "robust"), ("N", "nonrobust")):
            x_adv = pgd(model, dataset.images, dataset.labels, way, ATK)
            logits = model.forward_way(Tensor(x_adv), way).data
            want = (logits.argmax(1) == dataset.labels).mean() * 100.0
            assert got[key] == pytest.approx(want)

    def test_standard_way_shares_one_batch(self, model, dataset):
        got = eval_standard_way_adv(model, dataset, ATK)
        x_adv = pgd(model, dataset.images, dataset.labels, "standard", ATK)
        for key, way in (("S", "standard"), ("R", "robust"), ("N", "nonrobust")):
            logits = model.forward_way(Tensor(x_adv), way).data
            want = (logits.argmax(1) == dataset.labels).mean() * 100.0
            assert got[key] == pytest.approx(want)

    def test_dia_antisymmetric(self):
        assert dia(70.0, 20.0) == 50.0
        assert dia(20.0, 70.0) == -50.0
        assert dia(42.0, 42.0) == 0.0


class TestDetection:
    def test_detect_rule(self, model, dataset):
        verdict = detect(model, dataset.images)
        y_r = model.forward_way(Tensor(dataset.images), "robust").data.argmax(1)
        y_n = model.forward_way(Tensor(dataset.images), "nonrobust").data.argmax(1)
        assert np.array_equal(verdict, (y_r != y_n).astype(np.int64))

    def test_mixed_set_balanced(self, model, dataset):
        mixed = build_mixed_set(model, dataset, ATK, seed=0)
        assert len(mixed) == 2 * len(dataset)
        assert mixed.adversarial.sum() == len(dataset)
        # natural half is the original data, only reordered
        nat = mixed.images[mixed.adversarial == 0]
        assert sorted(map(float, nat.sum(axis=(1, 2, 3)))) == pytest.approx(
            sorted(map(float, dataset.images.sum(axis=(1, 2, 3)))), abs=1e-3)

    def test_mixed_set_seeded_shuffle(self, model, dataset):
        a = build_mixed_set(model, dataset, ATK, seed=0)
        b = build_mixed_set(model, dataset, ATK, seed=0)
        c = build_mixed_set(model, dataset, ATK, seed=1)
        assert np.array_equal(a.images, b.images)
        assert not np.array_equal(a.adversarial, c.adversarial)

    def test_rad_tally(self, model, dataset):
        mixed = build_mixed_set(model, dataset, ATK, seed=0)
        got = rad(model, mixed)
        verdict = detect(model, mixed.images)
        assert got == pytest.approx((verdict == mixed.adversarial).mean() * 100.0)

    def test_calibrate_oracle(self, model, dataset):
        mixed = build_mixed_set(model, dataset, ATK, seed=0)
        got = calibrate(model, mixed)
        s = model.forward_way(Tensor(mixed.images), "standard").data.argmax(1)
        r = model.forward_way(Tensor(mixed.images), "robust").data.argmax(1)
        routed = np.where(detect(model, mixed.images) == 1, r, s)
        assert got["raw_acc"] == pytest.approx((s == mixed.labels).mean() * 100.0)
        assert got["calibrated_acc"] == pytest.approx(
            (routed == mixed.labels).mean() * 100.0)


class TestReport:
    def test_json_roundtrip(self, model, dataset):
        rep = evaluate(model, dataset, [ATK], with_detection=True, seed=1)
        back = EvalReport.from_json(rep.to_json())
        assert back.clean_acc == rep.clean_acc
        assert back.adv_per_way == rep.adv_per_way
        assert back.detection == rep.detection

    def test_table_mentions_all_sections(self, model, dataset):
        rep = evaluate(model, dataset, [ATK], with_detection=True, seed=1)
        table = rep.to_table()
        assert "clean" in table and "Detection" in table
        assert "l2 e=0.3" in table

    def test_dia_consistency(self, model, dataset):
        rep = evaluate(model, dataset, [ATK])
        row = rep.adv_per_way[0]
        assert row["dia"] == pytest.approx(row["R"] - row["N"])
