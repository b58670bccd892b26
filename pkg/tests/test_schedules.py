"""Batch-size curve, loss weight, learning rate, and per-class thresholds."""

import numpy as np
import pytest

from semilab.schedules import (
    CplState,
    ScheduleConfig,
    bexp,
    cosine_lr,
    cpl_record,
    cpl_record_batch,
    cpl_thresholds,
    lambda_coeff,
    mean_bexp_fraction,
    overall_fraction_candidates,
    unlabeled_batch_size,
)


class TestBexp:
    def test_boundary_values(self):
        for alpha in (0.0, 0.3, 0.5, 0.7, 0.9):
            assert bexp(448, 0, 1000, alpha) == pytest.approx(0.0, abs=1e-12)
            assert bexp(448, 1000, 1000, alpha) == pytest.approx(448.0, rel=1e-12)

    def test_midpoint_hand_value(self):
        # u=448, t=512, T=1024, alpha=0.7:
        # remaining = 0.5 -> 448 * (1 - 0.5/0.65) = 448 * 3/13
        assert bexp(448, 512, 1024, 0.7) == pytest.approx(448 * 3 / 13, rel=1e-9)
        assert bexp(448, 512, 1024, 0.7) == pytest.approx(103.38, abs=0.01)

    def test_monotone_nondecreasing(self):
        ts = np.arange(0, 1001)
        for alpha in (0.0, 0.5, 0.9):
            vals = bexp(448, ts, 1000, alpha)
            assert np.all(np.diff(vals) >= -1e-9)

    def test_larger_alpha_flattens_the_start(self):
        mid_small = bexp(448, 300, 1000, 0.5)
        mid_large = bexp(448, 300, 1000, 0.9)
        assert mid_large < mid_small

    def test_alpha_zero_is_linear(self):
        vals = bexp(100, np.arange(0, 11), 10, 0.0)
        np.testing.assert_allclose(vals, 10.0 * np.arange(0, 11), rtol=1e-12)

    def test_vectorized_matches_scalar(self):
        ts = np.array([0, 17, 500, 999])
        vec = bexp(448, ts, 1000, 0.7)
        for t, v in zip(ts, vec):
            assert bexp(448, int(t), 1000, 0.7) == pytest.approx(float(v), rel=1e-12)


class TestMeanFraction:
    def test_closed_form_matches_discrete_mean(self):
        # the discrete average over many steps converges to the integral
        T = 200_000
        ts = np.arange(T)
        for alpha in (0.5, 0.7, 0.9):
            discrete = float(bexp(1.0, ts, T, alpha).mean())
            assert discrete == pytest.approx(mean_bexp_fraction(alpha), abs=1e-4)

    def test_published_operating_points(self):
        assert mean_bexp_fraction(0.5) == pytest.approx(0.386, abs=5e-4)
        assert mean_bexp_fraction(0.7) == pytest.approx(0.309, abs=5e-4)
        assert mean_bexp_fraction(0.9) == pytest.approx(0.173, abs=5e-4)

    def test_closed_form_formula(self):
        for alpha in (0.2, 0.5, 0.8):
            expected = 1 - 1 / alpha + ((1 - alpha) / alpha**2) * np.log(1 / (1 - alpha))
            assert mean_bexp_fraction(alpha) == pytest.approx(expected, rel=1e-12)

    def test_domain_is_open_interval(self):
        with pytest.raises(ValueError):
            mean_bexp_fraction(0.0)
        with pytest.raises(ValueError):
            mean_bexp_fraction(1.0)

    def test_overall_fraction_candidates_are_consistent(self):
        cfg = ScheduleConfig(l=64, mu=7, T=100, alpha=0.7)
        cands = overall_fraction_candidates(cfg)
        m = mean_bexp_fraction(0.7)
        assert cands["unlabeled_only"] == pytest.approx(m, rel=1e-12)
        assert cands["batch_weighted"] == pytest.approx((64 + m * 448) / 512, rel=1e-12)
        assert 0 < cands["pass_weighted_full_conf"] < 1


class TestScheduleConfig:
    def test_u_defaults_to_mu_times_l(self):
        cfg = ScheduleConfig(l=64, mu=7, T=100)
        assert cfg.u == 448

    def test_explicit_u_must_agree_with_mu(self):
        assert ScheduleConfig(l=64, mu=7, u=448, T=100).u == 448
        with pytest.raises(ValueError):
            ScheduleConfig(l=64, mu=7, u=100, T=100)

    def test_alpha_range(self):
        with pytest.raises(ValueError):
            ScheduleConfig(l=4, mu=2, T=10, alpha=1.0)

    def test_batch_size_rounds_and_clamps(self):
        cfg = ScheduleConfig(l=64, mu=7, T=1024, alpha=0.7, cbs_enabled=True)
        assert unlabeled_batch_size(cfg, 0) == 0
        assert unlabeled_batch_size(cfg, 1023) <= 448
        assert unlabeled_batch_size(cfg, 512) == round(448 * 3 / 13)

    def test_batch_size_flat_when_disabled(self):
        cfg = ScheduleConfig(l=64, mu=7, T=1024, cbs_enabled=False)
        assert all(unlabeled_batch_size(cfg, t) == 448 for t in (0, 100, 1023))

    def test_batch_size_range_checked(self):
        cfg = ScheduleConfig(l=4, mu=2, T=10)
        with pytest.raises(ValueError):
            unlabeled_batch_size(cfg, 10)
        with pytest.raises(ValueError):
            unlabeled_batch_size(cfg, -1)

    def test_lambda_is_linear_in_batch_size(self):
        cfg = ScheduleConfig(l=64, mu=7, T=100, base_lambda=1.0)
        assert lambda_coeff(cfg, 0) == 0.0
        assert lambda_coeff(cfg, 96) == pytest.approx(1.5, rel=1e-12)
        assert lambda_coeff(cfg, 448) == pytest.approx(7.0, rel=1e-12)
        doubled = ScheduleConfig(l=64, mu=7, T=100, base_lambda=2.0)
        assert lambda_coeff(doubled, 96) == pytest.approx(3.0, rel=1e-12)


class TestCosine:
    def test_starts_at_lr0(self):
        assert cosine_lr(0.03, 0, 1000) == pytest.approx(0.03, rel=1e-12)

    def test_final_value(self):
        assert cosine_lr(0.03, 1000, 1000) == pytest.approx(
            0.03 * np.cos(7 * np.pi / 16), rel=1e-12
        )

    def test_monotone_decreasing(self):
        vals = [cosine_lr(0.03, t, 100) for t in range(101)]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        assert vals[-1] > 0

    def test_range_checked(self):
        with pytest.raises(ValueError):
            cosine_lr(0.03, 101, 100)


def brute_force_state(n_samples, n_classes, tau, events):
    """Replay an update log naively: keep the latest confident label per sample."""
    latest = {}
    for idx, cls, conf in events:
        if conf > tau:
            latest[idx] = cls
    sigma = np.zeros(n_classes, dtype=np.int64)
    for cls in latest.values():
        sigma[cls] += 1
    unused = n_samples - len(latest)
    return sigma, unused


class TestCpl:
    def test_initial_state(self):
        st = CplState(n_samples=20, n_classes=5, tau=0.9, cpl_enabled=True)
        assert np.all(st.sample_predictions == -1)
        assert np.all(st.sigma == 0)
        assert st.unused_count == 20

    def test_low_confidence_is_ignored(self):
        st = CplState(n_samples=4, n_classes=3, tau=0.9, cpl_enabled=True)
        cpl_record(st, 0, 1, 0.5)
        assert st.unused_count == 4
        assert np.all(st.sigma == 0)

    def test_confident_update_and_reassignment(self):
        st = CplState(n_samples=4, n_classes=3, tau=0.9, cpl_enabled=True)
        cpl_record(st, 0, 1, 0.95)
        assert st.sigma[1] == 1 and st.unused_count == 3
        cpl_record(st, 0, 2, 0.99)  # same sample flips class
        assert st.sigma[1] == 0 and st.sigma[2] == 1 and st.unused_count == 3

    def test_sigma_matches_brute_force_replay(self):
        rng = np.random.default_rng(0)
        st = CplState(n_samples=50, n_classes=6, tau=0.8, cpl_enabled=True)
        events = []
        for _ in range(2000):
            idx = int(rng.integers(50))
            cls = int(rng.integers(6))
            conf = float(rng.random())
            events.append((idx, cls, conf))
            cpl_record(st, idx, cls, conf)
        sigma, unused = brute_force_state(50, 6, 0.8, events)
        np.testing.assert_array_equal(st.sigma, sigma)
        assert st.unused_count == unused

    def test_batch_update_equals_sequential(self):
        rng = np.random.default_rng(1)
        a = CplState(n_samples=30, n_classes=4, tau=0.7, cpl_enabled=True)
        b = CplState(n_samples=30, n_classes=4, tau=0.7, cpl_enabled=True)
        for _ in range(50):
            k = int(rng.integers(1, 12))
            idx = rng.integers(0, 30, size=k)  # duplicates likely
            cls = rng.integers(0, 4, size=k)
            conf = rng.random(size=k)
            cpl_record_batch(a, idx, cls, conf)
            for i in range(k):
                cpl_record(b, int(idx[i]), int(cls[i]), float(conf[i]))
        np.testing.assert_array_equal(a.sigma, b.sigma)
        np.testing.assert_array_equal(a.sample_predictions, b.sample_predictions)
        assert a.unused_count == b.unused_count

    def test_thresholds_stay_within_zero_and_tau(self):
        rng = np.random.default_rng(2)
        st = CplState(n_samples=40, n_classes=5, tau=0.95, cpl_enabled=True)
        for _ in range(500):
            cpl_record(st, int(rng.integers(40)), int(rng.integers(5)), float(rng.random()))
            th = cpl_thresholds(st)
            assert th.shape == (5,)
            assert np.all(th >= 0.0) and np.all(th <= 0.95 + 1e-12)

    def test_convex_map_spot_values(self):
        # beta=0 -> 0; beta=0.5 -> tau/3; beta=1 -> tau
        st = CplState(n_samples=4, n_classes=2, tau=0.9, cpl_enabled=True)
        cpl_record(st, 0, 0, 0.99)
        cpl_record(st, 1, 0, 0.99)
        cpl_record(st, 2, 1, 0.99)
        # sigma=[2,1], unused=1 -> denom=2, beta=[1, 0.5]
        th = cpl_thresholds(st)
        assert th[0] == pytest.approx(0.9, rel=1e-12)
        assert th[1] == pytest.approx(0.9 / 3.0, rel=1e-12)
        fresh = CplState(n_samples=4, n_classes=2, tau=0.9, cpl_enabled=True)
        np.testing.assert_allclose(cpl_thresholds(fresh), 0.0)  # beta=0 everywhere

    def test_unused_dominates_denominator_early(self):
        st = CplState(n_samples=100, n_classes=4, tau=0.9, cpl_enabled=True)
        cpl_record(st, 0, 2, 0.99)
        th = cpl_thresholds(st)
        # denom = max(1, 99) = 99 -> beta tiny -> thresholds near zero
        assert th[2] < 0.01

    def test_disabled_state_gives_flat_tau(self):
        st = CplState(n_samples=10, n_classes=3, tau=0.95, cpl_enabled=False)
        np.testing.assert_allclose(cpl_thresholds(st), 0.95)
        cpl_record(st, 0, 1, 0.99)  # recording is harmless when disabled
        np.testing.assert_allclose(cpl_thresholds(st), 0.95)

    def test_record_validates_ranges(self):
        st = CplState(n_samples=5, n_classes=3, tau=0.9, cpl_enabled=True)
        with pytest.raises(IndexError):
            cpl_record(st, 5, 0, 0.99)
        with pytest.raises(ValueError):
            cpl_record(st, 0, 3, 0.99)
