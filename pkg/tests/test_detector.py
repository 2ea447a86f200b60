import numpy as np
import pytest

from lgflow.detector import (
    detect,
    fit_diagnostic,
    fit_from_latents,
    latent_trajectory,
    nll_flags,
    nll_score,
    recommended_window,
    score_windows,
    segments,
    windows_overlapping,
)
from lgflow.dynamics import LgLdm
from lgflow.flow import build_flow
from lgflow.gof import critical_value, mv_ks_statistic
from lgflow.training import loss_sequential


def identity_pipeline(D=4, k=5):
    return build_flow(D, k, n_layers=2, hidden_size=8), LgLdm(np.zeros((D, D)), np.zeros(D))


def random_pipeline(D=3, k=4, seed=0):
    rng = np.random.default_rng(seed)
    flow = build_flow(D, k, n_layers=2, hidden_size=8, seed=seed, zero_init=False)
    for p in flow.params():
        p[:] = rng.normal(scale=0.2, size=p.shape)
    return flow, LgLdm(0.5 * np.eye(D), rng.normal(scale=0.1, size=D))


class TestLatents:
    def test_identity_pipeline(self):
        flow, ldm = identity_pipeline()
        x = np.random.default_rng(0).normal(size=(40, 4))
        lat = latent_trajectory(flow, ldm, x, 5)
        assert np.array_equal(lat.whitened, x[5:])
        assert lat.whitened.shape == (35, 4)

    def test_length(self):
        flow, ldm = random_pipeline()
        x = np.random.default_rng(1).normal(size=(57, 3))
        assert len(latent_trajectory(flow, ldm, x, 4).whitened) == 53


class TestNll:
    def test_constant_at_origin(self):
        flow, ldm = identity_pipeline()
        nll = nll_score(flow, ldm, np.zeros((10, 4)), 5)
        assert np.all(nll[:5] == 0)
        np.testing.assert_allclose(nll[5:], 2 * np.log(2 * np.pi), atol=1e-15)
        assert nll[5] == pytest.approx(3.67575, abs=1e-5)

    def test_mean_is_loss(self):
        flow, ldm = random_pipeline(seed=2)
        x = np.random.default_rng(2).normal(size=(60, 3))
        assert abs(nll_score(flow, ldm, x, 4)[4:].mean() - loss_sequential(flow, ldm, x, 4).loss) < 1e-10

    def test_flags(self):
        f = nll_flags(np.array([9.0, 9.0, 1.0, 5.0, 5.1]), 5.0, 2)
        assert f.tolist() == [False, False, False, False, True]


class TestScoreWindows:
    def test_single_window(self):
        z = np.random.default_rng(0).normal(size=(50, 2))
        ws = score_windows(z, 50, stride=50)
        assert len(ws.windows) == 1
        assert np.all(ws.score == ws.windows[0].s)
        assert ws.windows[0].s == pytest.approx(mv_ks_statistic(z), abs=1e-15)

    def test_window_statistics(self):
        z = np.random.default_rng(1).normal(size=(40, 3))
        ws = score_windows(z, 10, stride=3)
        assert [w.t_start for w in ws.windows] == list(range(0, 31, 3))
        for w in ws.windows:
            assert w.s == pytest.approx(mv_ks_statistic(z[w.t_start:w.t_start + 10]), abs=1e-15)
            assert w.tau == critical_value(10, 3, 0.05)

    def test_max_over_covering(self):
        z = np.random.default_rng(2).normal(size=(30, 2))
        ws = score_windows(z, 8, stride=2)
        for i in range(30):
            cover = [w.s for w in ws.windows if w.t_start <= i < w.t_start + 8]
            assert ws.score[i] == (max(cover) if cover else 0.0)

    def test_stride_never_increases(self):
        z = np.random.default_rng(3).normal(size=(60, 2))
        dense = score_windows(z, 10, stride=1).score
        for stride in (2, 3, 7):
            assert np.all(score_windows(z, 10, stride=stride).score <= dense)

    def test_offset(self):
        z = np.random.default_rng(4).normal(size=(20, 2))
        assert score_windows(z, 10, 5, t_offset=7).windows[0].t_start == 7

    def test_shifted_segment_flagged(self):
        z = np.random.default_rng(5).normal(size=(400, 2))
        z[200:300] += 2.0
        ws = score_windows(z, 64)
        assert ws.flags[220:280].all()
        assert not ws.flags[:100].any()

    def test_invalid(self):
        with pytest.raises(ValueError):
            score_windows(np.zeros((5, 2)), 6)
        with pytest.raises(ValueError):
            score_windows(np.zeros((5, 2)), 2, stride=0)


class TestDetect:
    def test_prefix_zero(self):
        flow, ldm = random_pipeline()
        x = np.random.default_rng(0).normal(size=(80, 3))
        r = detect(flow, ldm, x, 4, 16)
        assert np.all(r.ks_score[:4] == 0) and not r.ks_flags[:4].any()
        assert np.all(r.nll_score[:4] == 0)
        assert r.windows[0].t_start == 4
        assert len(r.ks_score) == 80

    def test_white_noise_calibration(self):
        flow, ldm = identity_pipeline(D=4, k=5)
        x = np.random.default_rng(1).normal(size=(1000, 4))
        r = detect(flow, ldm, x, 5, 64)
        assert r.ks_flags.mean() <= 0.05 + 0.05


class TestFit:
    def test_gaussian_latents_trustworthy(self):
        ok = 0
        for seed in range(20):
            z = np.random.default_rng(seed).normal(size=(2000, 4))
            ok += fit_from_latents(z, 64).trustworthy
        assert ok >= 19

    def test_fraction(self):
        z = np.random.default_rng(0).normal(size=(640, 2))
        z[:64] += 3.0
        rep = fit_from_latents(z, 64)
        assert rep.n_windows == 10 and rep.n_compliant == 9
        assert rep.fit_fraction == 0.9
        assert rep.trustworthy  # 0.9 >= 1 - alpha - margin
        z[64:128] += 3.0
        assert not fit_from_latents(z, 64).trustworthy

    def test_identity_flow_on_sinusoids(self):
        from lgflow.synth import SignalSpec, generate_base
        flow, ldm = identity_pipeline(D=4, k=20)
        x = generate_base(SignalSpec(length=3020)).values
        assert fit_diagnostic(flow, ldm, x, 20, 1000).fit_fraction == 0.0


class TestHelpers:
    @pytest.mark.parametrize("D,cap,expected", [(4, 10_000, 64), (2, 10_000, 8), (10, 500, 500), (1, 10, 2)])
    def test_recommended_window(self, D, cap, expected):
        assert recommended_window(D, cap) == expected

    def test_recommended_floor(self):
        assert recommended_window(10, 100) == 200

    def test_segments(self):
        assert segments([0, 1, 1, 0, 0, 1]) == [(1, 3), (5, 6)]
        assert segments([0, 0]) == []

    def test_overlapping(self):
        z = np.random.default_rng(0).normal(size=(50, 2))
        ws = score_windows(z, 10, stride=10).windows
        assert [w.t_start for w in windows_overlapping(ws, 15, 21)] == [10, 20]
