"""Metric correctness against brute-force oracles."""
import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from petrecon.metrics import (MetricsReport, SliceMetrics, accuracy,
                              evaluate_prediction, nmse, paired_t_test, psnr,
                              read_per_slice_csv, regularized_incomplete_beta,
                              render_report_csv, render_report_table, ssim,
                              write_per_slice_csv)
from petrecon.nn import ShapeError
from petrecon.phantom import SliceSample, drf_class_of


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------

def ssim_oracle(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03):
    """Direct-summation SSIM without separable-filter shortcuts."""
    h, w = a.shape
    half = window // 2
    weights = np.zeros((window, window))
    for i in range(window):
        for j in range(window):
            di, dj = i - half, j - half
            weights[i, j] = math.exp(-(di * di + dj * dj) / (2 * sigma * sigma))
    weights /= weights.sum()
    c1, c2 = k1 * k1, k2 * k2
    values = []
    for top in range(h - window + 1):
        for left in range(w - window + 1):
            pa = a[top:top + window, left:left + window]
            pb = b[top:top + window, left:left + window]
            mu_a = float((weights * pa).sum())
            mu_b = float((weights * pb).sum())
            var_a = float((weights * pa * pa).sum()) - mu_a * mu_a
            var_b = float((weights * pb * pb).sum()) - mu_b * mu_b
            cov = float((weights * pa * pb).sum()) - mu_a * mu_b
            values.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                          ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    return float(np.mean(values))


def t_pvalue_oracle(t: float, dof: int, n_points: int = 20001) -> float:
    """Two-sided p by Simpson integration of the t density."""
    if t == 0.0:
        return 1.0
    lim = abs(t)
    xs = np.linspace(-lim, lim, n_points)
    log_norm = (math.lgamma((dof + 1) / 2.0) - math.lgamma(dof / 2.0)
                - 0.5 * math.log(dof * math.pi))
    pdf = np.exp(log_norm - (dof + 1) / 2.0 * np.log1p(xs * xs / dof))
    h = xs[1] - xs[0]
    inner = (h / 3.0) * (pdf[0] + pdf[-1] + 4 * pdf[1:-1:2].sum()
                         + 2 * pdf[2:-1:2].sum())
    return 1.0 - inner


# ---------------------------------------------------------------------------
# PSNR
# ---------------------------------------------------------------------------

class TestPsnr:
    def test_identical_images_infinite(self):
        x = np.random.default_rng(0).uniform(0, 1, (16, 16))
        assert psnr(x, x) == math.inf

    def test_20db(self):
        target = np.full((10, 10), 0.5)
        pred = target.copy()
        pred[::2] += 0.1
        pred[1::2] -= 0.1
        npt.assert_allclose(psnr(pred, target), 20.0, atol=1e-9)

    def test_30db(self):
        target = np.full((10, 10), 0.5)
        pred = target + math.sqrt(1e-3)
        npt.assert_allclose(psnr(pred, target), 30.0, atol=1e-9)

    def test_decreases_with_noise_amplitude(self):
        rng = np.random.default_rng(1)
        target = rng.uniform(0.2, 0.8, (32, 32))
        noise = rng.standard_normal((32, 32))
        values = [psnr(target + amp * noise, target)
                  for amp in (0.01, 0.05, 0.2)]
        assert values[0] > values[1] > values[2]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            psnr(np.zeros((4, 4)), np.zeros((5, 5)))


# ---------------------------------------------------------------------------
# SSIM
# ---------------------------------------------------------------------------

class TestSsim:
    def test_self_similarity_is_one(self):
        x = np.random.default_rng(2).uniform(0, 1, (16, 16))
        assert abs(ssim(x, x) - 1.0) < 1e-9

    def test_inversion_breaks_similarity(self):
        x = np.random.default_rng(3).uniform(0, 1, (16, 16))
        assert ssim(1.0 - x, x) < 1.0

    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(4):
            a = rng.uniform(0, 1, (16, 16))
            b = np.clip(a + rng.normal(0, 0.1, (16, 16)), 0, 1)
            assert abs(ssim(a, b) - ssim_oracle(a, b)) < 1e-6

    def test_symmetric(self):
        rng = np.random.default_rng(5)
        a = rng.uniform(0, 1, (14, 14))
        b = rng.uniform(0, 1, (14, 14))
        assert abs(ssim(a, b) - ssim(b, a)) < 1e-9

    def test_too_small_rejected(self):
        with pytest.raises(ShapeError, match="11"):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))


# ---------------------------------------------------------------------------
# NMSE
# ---------------------------------------------------------------------------

class TestNmse:
    def test_zero_at_equality(self):
        x = np.random.default_rng(6).uniform(0.1, 1, (8, 8))
        assert nmse(x, x) == 0.0

    def test_doubling_gives_one(self):
        x = np.random.default_rng(7).uniform(0.1, 1, (8, 8))
        npt.assert_allclose(nmse(2.0 * x, x), 1.0, rtol=1e-9)

    def test_offset_reference_value(self):
        # sum((0.1)^2 * 100) / sum(t^2), computed directly
        target = np.random.default_rng(8).uniform(0.2, 0.9, 100).reshape(10, 10)
        pred = target + 0.1
        expected = (0.1 ** 2 * 100) / float(np.sum(target ** 2))
        npt.assert_allclose(nmse(pred, target), expected, rtol=1e-9)

    def test_zero_energy_rejected(self):
        with pytest.raises(ValueError, match="zero-energy"):
            nmse(np.ones((4, 4)), np.zeros((4, 4)))

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-3, 3))
    def test_scale_law(self, alpha):
        t = np.random.default_rng(9).uniform(0.1, 1, (6, 6))
        npt.assert_allclose(nmse(alpha * t, t), (alpha - 1.0) ** 2, atol=1e-9)


# ---------------------------------------------------------------------------
# Accuracy
# ---------------------------------------------------------------------------

class TestAccuracy:
    def test_all_correct(self):
        logits = np.eye(3)
        assert accuracy(logits, np.array([0, 1, 2])) == 1.0

    def test_tie_goes_to_lowest_index(self):
        logits = np.zeros((4, 3))
        assert accuracy(logits, np.array([2, 2, 2, 2])) == 0.0
        assert accuracy(logits, np.array([0, 0, 0, 0])) == 1.0

    def test_half_correct(self):
        logits = np.array([[1.0, 0, 0], [1.0, 0, 0]])
        assert accuracy(logits, np.array([0, 1])) == 0.5


# ---------------------------------------------------------------------------
# Paired t-test
# ---------------------------------------------------------------------------

class TestPairedTTest:
    def test_zero_variance_rejected(self):
        a = np.array([1.0, 2.0, 3.0])
        with pytest.raises(ValueError, match="zero variance"):
            paired_t_test(a, a)
        with pytest.raises(ValueError, match="zero variance"):
            paired_t_test(a, a - 0.5)

    def test_balanced_differences(self):
        t, p = paired_t_test(np.array([1.0, -1.0, 1.0, -1.0]), np.zeros(4))
        assert t == 0.0
        assert p == 1.0

    def test_strong_effect_small_p(self):
        d = np.array([1.0, 1.1, 0.9, 1.05, 0.95])
        _, p = paired_t_test(d, np.zeros(5))
        assert p < 0.001

    def test_matches_integration_oracle(self):
        rng = np.random.default_rng(10)
        fixtures = [
            (np.array([1.0, 1.1, 0.9, 1.05, 0.95]), np.zeros(5)),
            (np.array([0.1, -0.2, 0.3, 0.05]), np.zeros(4)),
            (rng.normal(0.5, 1.0, 12), rng.normal(0.0, 1.0, 12)),
            (rng.normal(0.0, 2.0, 30), rng.normal(0.1, 2.0, 30)),
            (rng.normal(1.0, 0.3, 7), rng.normal(0.8, 0.3, 7)),
        ]
        for a, b in fixtures:
            t, p = paired_t_test(a, b)
            assert abs(p - t_pvalue_oracle(t, len(a) - 1)) < 1e-6

    def test_sign_symmetry(self):
        rng = np.random.default_rng(11)
        a = rng.normal(0.3, 1.0, 9)
        b = rng.normal(0.0, 1.0, 9)
        t_ab, p_ab = paired_t_test(a, b)
        t_ba, p_ba = paired_t_test(b, a)
        assert abs(t_ab + t_ba) < 1e-12
        assert abs(p_ab - p_ba) < 1e-12

    def test_incomplete_beta_edges(self):
        assert regularized_incomplete_beta(2.0, 3.0, 0.0) == 0.0
        assert regularized_incomplete_beta(2.0, 3.0, 1.0) == 1.0
        with pytest.raises(ValueError):
            regularized_incomplete_beta(2.0, 3.0, 1.5)


# ---------------------------------------------------------------------------
# Report assembly
# ---------------------------------------------------------------------------

def _fake_samples(seed=0, lpet_equals_spet=False):
    rng = np.random.default_rng(seed)
    samples = []
    for subject in range(2):
        for drf in (20, 50, 100):
            spet = rng.uniform(0.1, 0.9, (16, 16)).astype(np.float32)
            lpet = spet if lpet_equals_spet else np.clip(
                spet + rng.normal(0, 0.05 * drf / 20, (16, 16)), 0, 1
            ).astype(np.float32)
            samples.append(SliceSample(lpet=lpet, spet=spet, drf=drf,
                                       drf_class=drf_class_of(drf),
                                       subject_id=subject, slice_index=0))
    return samples


class TestEvaluatePrediction:
    def test_identity_oracle_model(self):
        samples = _fake_samples(lpet_equals_spet=True)
        report, _ = evaluate_prediction(lambda l: l, samples, model="oracle")
        assert len(report.rows) == 3
        for row in report.rows:
            assert row.nmse_mean == 0.0
            assert row.psnr_inf_count == row.n_slices

    def test_passthrough_reproduces_lpet_metrics(self):
        samples = _fake_samples(seed=1)
        report, per_slice = evaluate_prediction(lambda l: l, samples,
                                                model="lpet")
        direct = [psnr(s.lpet, s.spet) for s in samples]
        reported = [m.psnr for m in per_slice]
        npt.assert_allclose(reported, direct, rtol=1e-12)

    def test_row_per_drf(self):
        samples = _fake_samples(seed=2)
        report, _ = evaluate_prediction(lambda l: l, samples)
        assert [row.drf for row in report.rows] == [20, 50, 100]

    def test_baseline_adds_pvalues(self):
        samples = _fake_samples(seed=3) * 2  # 4 slices per drf for the test
        for i, s in enumerate(samples):
            s.slice_index = i // 6
        _, baseline = evaluate_prediction(lambda l: l, samples)
        report, _ = evaluate_prediction(
            lambda l: np.clip(l + 0.01, 0, 1), samples,
            baseline_slices=baseline, baseline_name="lpet")
        assert all(row.p_psnr is not None for row in report.rows)

    def test_render_table_and_csv(self):
        samples = _fake_samples(seed=4)
        report, per_slice = evaluate_prediction(lambda l: l, samples, model="m")
        table = render_report_table([report])
        assert "DRF=20" in table and "PSNR" in table
        csv = render_report_csv([report])
        assert csv.splitlines()[0].startswith("model,drf,")
        assert len(csv.splitlines()) == 4

    def test_per_slice_roundtrip(self, tmp_path):
        samples = _fake_samples(seed=5)
        _, per_slice = evaluate_prediction(lambda l: l, samples)
        path = tmp_path / "per_slice.csv"
        write_per_slice_csv(per_slice, path)
        restored = read_per_slice_csv(path)
        assert len(restored) == len(per_slice)
        for a, b in zip(restored, per_slice):
            assert (a.subject_id, a.slice_index, a.drf) == \
                   (b.subject_id, b.slice_index, b.drf)
            npt.assert_allclose(a.psnr, b.psnr)
