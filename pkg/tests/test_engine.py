"""Training engine: the combined update step, masking, and determinism."""

import json

import numpy as np
import pytest

from semilab.data import Dataset, make_ssl_split, synth_generate
from semilab.engine import (
    EvalRecord,
    TrainConfig,
    Trainer,
    evaluate,
    fixmatch_step,
    flags_label,
    train,
)
from semilab.nn import Model, SGDMomentum, ema_update
from semilab.schedules import ScheduleConfig
from semilab.tensor import backward, softmax_cross_entropy


def fresh_pair(seed=0, widths=(4, 5)):
    model = Model(in_channels=3, num_classes=10, widths=widths, seed=seed)
    opt = SGDMomentum(model, lr=0.05, momentum=0.9, weight_decay=5e-4)
    return model, opt


def random_batch(rng, n, hw=8):
    return rng.uniform(0.0, 1.0, size=(n, 3, hw, hw)).astype(np.float32)


def tiny_train_config(
    cbs=False, strong=False, cpl=False, T=6, seed=3, eval_every=3, target=None
):
    full = synth_generate(7, 240, 10, 8, 8)
    tds = Dataset(full.images[:200], full.labels[:200], class_count=10, name="tr")
    xds = Dataset(full.images[200:], full.labels[200:], class_count=10, name="te")
    split = make_ssl_split(tds, n_labeled=20, seed=7)
    sched = ScheduleConfig(l=8, mu=3, T=T, alpha=0.7, cbs_enabled=cbs)
    return TrainConfig(
        schedule=sched,
        dataset=tds,
        split=split,
        test_dataset=xds,
        cpl_enabled=cpl,
        labeled_strong_aug=strong,
        seed=seed,
        eval_every=eval_every,
        target_accuracy=target,
        model_widths=(4, 5),
    )


class TestFlags:
    def test_labels(self):
        assert flags_label(False, False, False) == "vanilla"
        assert flags_label(True, False, False) == "cbs"
        assert flags_label(False, False, True) == "cpl"
        assert flags_label(True, True, True) == "cbs+strongaug+cpl"


class TestFixmatchStep:
    def test_total_is_supervised_plus_scaled_unsupervised(self):
        rng = np.random.default_rng(0)
        model, opt = fresh_pair()
        xl = random_batch(rng, 4)
        yl = rng.integers(0, 10, size=4).astype(np.int64)
        xu = random_batch(rng, 6)
        strong = random_batch(rng, 6)
        thresholds = np.zeros(10)  # everything passes
        lam = 1.5
        total, stats, batch = fixmatch_step(
            model, opt, xl, yl, xu, lambda rows: strong[rows], thresholds, lam
        )
        assert stats.n_confident == 6
        assert total == pytest.approx(
            np.float32(stats.supervised_loss)
            + np.float32(lam) * np.float32(stats.unsupervised_loss),
            rel=1e-6,
        )

    def test_unsupervised_term_divides_by_drawn_batch(self):
        # halving the survivors at fixed u_t halves the unsupervised loss scale:
        # check via explicit oracle on a frozen model
        rng = np.random.default_rng(1)
        model, _ = fresh_pair(seed=5)
        xu = random_batch(rng, 8)
        logits = model.predict(xu)
        probs = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        pseudo = probs.argmax(axis=1)

        model_a, opt_a = fresh_pair(seed=5)
        strong = random_batch(rng, 8)
        _, stats, batch = fixmatch_step(
            model_a,
            opt_a,
            random_batch(rng, 2),
            np.array([0, 1], dtype=np.int64),
            xu,
            lambda rows: strong[rows],
            np.zeros(10),
            1.0,
        )
        # oracle: mean CE of the strong logits vs pseudo labels over u_t=8
        frozen, _ = fresh_pair(seed=5)
        strong_logits = frozen.forward(
            strong, train=True
        )  # same weights before the step
        oracle = softmax_cross_entropy(strong_logits, pseudo, denom=8.0)
        assert stats.unsupervised_loss == pytest.approx(float(oracle.data), rel=1e-5)

    def test_masked_rows_never_get_strong_passes(self):
        rng = np.random.default_rng(2)
        model, opt = fresh_pair()
        xu = random_batch(rng, 6)
        calls = []

        def strong_for_rows(rows):
            calls.append(rows.copy())
            return random_batch(rng, len(rows))

        fixmatch_step(
            model,
            opt,
            random_batch(rng, 2),
            np.array([0, 1], dtype=np.int64),
            xu,
            strong_for_rows,
            np.full(10, 2.0),  # impossible threshold: nothing passes
            1.0,
        )
        assert calls == []  # callable never invoked for an empty mask

    def test_mask_zero_contributes_zero_gradient(self):
        # a run where sample j is masked equals a run where sample j's strong
        # image is garbage: masked rows cannot influence the update
        rng = np.random.default_rng(3)
        xl = random_batch(rng, 3)
        yl = rng.integers(0, 10, size=3).astype(np.int64)
        xu = random_batch(rng, 5)
        strong = random_batch(rng, 5)
        garbage = random_batch(rng, 5)

        model_a, opt_a = fresh_pair(seed=9)
        probs_sorted = np.sort(
            _softmax_np(model_a.predict(xu)), axis=1
        )  # top prob per row
        top = probs_sorted[:, -1]
        cut = np.median(top)
        thresholds = np.full(10, cut)  # roughly half the rows pass

        def strong_a(rows):
            return strong[rows]

        def strong_b(rows):
            out = strong.copy()
            masked = np.setdiff1d(np.arange(5), rows)
            out[masked] = garbage[masked]  # corrupt only masked rows
            return out[rows]

        model_b, opt_b = fresh_pair(seed=9)
        fixmatch_step(model_a, opt_a, xl, yl, xu, strong_a, thresholds, 1.0)
        fixmatch_step(model_b, opt_b, xl, yl, xu, strong_b, thresholds, 1.0)
        for name in model_a.params:
            np.testing.assert_array_equal(
                model_a.params[name].data, model_b.params[name].data
            )

    def test_lambda_scales_unsupervised_term_linearly(self):
        rng = np.random.default_rng(4)
        xl = random_batch(rng, 3)
        yl = rng.integers(0, 10, size=3).astype(np.int64)
        xu = random_batch(rng, 4)
        strong = random_batch(rng, 4)
        totals = {}
        for lam in (0.5, 1.0, 2.0):
            model, opt = fresh_pair(seed=11)
            total, stats, _ = fixmatch_step(
                model, opt, xl, yl, xu, lambda r: strong[r], np.zeros(10), lam
            )
            totals[lam] = (total, stats.supervised_loss, stats.unsupervised_loss)
        # same batches, same weights -> identical component losses
        assert totals[0.5][1] == totals[2.0][1]
        assert totals[0.5][2] == totals[2.0][2]
        s, u = totals[1.0][1], totals[1.0][2]
        for lam in (0.5, 1.0, 2.0):
            assert totals[lam][0] == pytest.approx(
                np.float32(s) + np.float32(lam) * np.float32(u), rel=1e-6
            )

    def test_empty_unlabeled_equals_pure_supervised_step(self):
        rng = np.random.default_rng(5)
        xl = random_batch(rng, 6)
        yl = rng.integers(0, 10, size=6).astype(np.int64)
        empty = np.zeros((0, 3, 8, 8), dtype=np.float32)

        model_a, opt_a = fresh_pair(seed=13)
        total_a, stats, _ = fixmatch_step(
            model_a, opt_a, xl, yl, empty, lambda r: empty, np.zeros(10), 0.0
        )

        # reference: hand-written supervised step with the same components
        model_b, opt_b = fresh_pair(seed=13)
        loss = softmax_cross_entropy(model_b.forward(xl, train=True), yl)
        backward(loss, params=model_b.params.values())
        opt_b.step()
        ema_update(model_b, 0.999)

        assert total_a == float(loss.data)
        assert stats.u_t == 0 and stats.n_confident == 0
        for name in model_a.params:
            np.testing.assert_array_equal(
                model_a.params[name].data, model_b.params[name].data
            )
            np.testing.assert_array_equal(model_a.ema[name], model_b.ema[name])

    def test_correct_confident_counting(self):
        rng = np.random.default_rng(6)
        model, opt = fresh_pair(seed=17)
        xu = random_batch(rng, 8)
        pseudo = _softmax_np(model.predict(xu)).argmax(axis=1)
        truth = pseudo.copy()
        truth[0] = (pseudo[0] + 1) % 10  # one wrong
        truth[1] = -1  # one unknown: excluded from the count
        _, stats, _ = fixmatch_step(
            model,
            opt,
            random_batch(rng, 2),
            np.array([0, 1], dtype=np.int64),
            xu,
            lambda r: xu[r],
            np.zeros(10),
            1.0,
            unlabeled_true_labels=truth,
        )
        assert stats.n_confident == 8
        assert stats.n_correct_confident == 6


def _softmax_np(logits):
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


class TestEvaluate:
    def test_perfectly_separable_oracle(self):
        # craft a dataset the model must classify perfectly after training on it
        full = synth_generate(3, 60, 3, 8, 8, noise=0.02)
        acc = evaluate(
            _train_tiny_supervised(full), full, use_ema=False, normalize=None
        )
        assert acc > 0.9

    def test_empty_test_sets_cannot_exist(self):
        with pytest.raises(ValueError):
            Dataset(
                np.zeros((0, 3, 8, 8), dtype=np.float32),
                np.zeros(0, dtype=np.int64),
                class_count=1,
                name="e",
            )


def _train_tiny_supervised(ds):
    model = Model(in_channels=3, num_classes=ds.class_count, widths=(8, 8), seed=0)
    opt = SGDMomentum(model, lr=0.05, momentum=0.9, weight_decay=0.0)
    for _ in range(60):
        loss = softmax_cross_entropy(model.forward(ds.images, train=True), ds.labels)
        backward(loss, params=model.params.values())
        opt.step()
    return model


class TestTrain:
    def test_records_steps_and_evals(self):
        res = train(tiny_train_config(T=6, eval_every=3))
        assert len(res.stats) == 6
        assert [e.t for e in res.evals] == [2, 5]
        assert res.ledger.forward_total > 0
        assert res.final_accuracy == res.evals[-1].accuracy

    def test_final_eval_always_present(self):
        res = train(tiny_train_config(T=5, eval_every=3))
        assert [e.t for e in res.evals] == [2, 4]

    def test_jsonl_streams_are_byte_identical_across_runs(self, tmp_path):
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        train(tiny_train_config(cbs=True, strong=True, cpl=True, T=5), jsonl_path=p1)
        train(tiny_train_config(cbs=True, strong=True, cpl=True, T=5), jsonl_path=p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_jsonl_record_shapes(self, tmp_path):
        path = tmp_path / "run.jsonl"
        train(tiny_train_config(T=4, eval_every=2), jsonl_path=path)
        records = [json.loads(line) for line in path.read_text().splitlines()]
        header, body = records[0], records[1:]
        assert header["l"] == 8 and header["u"] == 24
        steps = [r for r in body if "loss_s" in r]
        evals = [r for r in body if "epoch_equivalent" in r]
        assert len(steps) == 4 and len(evals) == 2
        assert list(steps[0]) == [
            "t",
            "u_t",
            "lambda",
            "lr",
            "n_confident",
            "n_correct_confident",
            "loss_s",
            "loss_u",
            "fwd_total",
            "bwd_total",
        ]
        assert list(evals[0]) == ["t", "epoch_equivalent", "accuracy"]

    def test_seed_changes_the_run(self):
        r1 = train(tiny_train_config(T=4, seed=3))
        r2 = train(tiny_train_config(T=4, seed=4))
        assert [s.supervised_loss for s in r1.stats] != [
            s.supervised_loss for s in r2.stats
        ]

    def test_early_stop_on_target(self):
        # target at chance level triggers on the very first evaluation
        res = train(tiny_train_config(T=50, eval_every=2, target=0.01))
        assert res.stopped_early
        assert len(res.stats) < 50

    def test_cbs_schedule_is_respected(self):
        res = train(tiny_train_config(cbs=True, T=6))
        assert res.stats[0].u_t == 0  # curve starts at zero
        assert all(s.u_t <= 24 for s in res.stats)

    def test_vanilla_draws_full_batches(self):
        res = train(tiny_train_config(T=4))
        assert all(s.u_t == 24 for s in res.stats)


class TestTrainer:
    def test_step_counter_and_resume_slices(self):
        cfg = tiny_train_config(T=6)
        whole = train(cfg)

        sliced = Trainer(cfg)
        for t in range(6):
            sliced.step(t)
        assert [s.supervised_loss for s in sliced.stats] == [
            s.supervised_loss for s in whole.stats
        ]

    def test_eval_requires_test_dataset(self):
        cfg = tiny_train_config(T=2)
        object.__setattr__(cfg, "test_dataset", None)
        tr = Trainer(cfg)
        tr.step(0)
        with pytest.raises(ValueError):
            tr.eval_now(0)
