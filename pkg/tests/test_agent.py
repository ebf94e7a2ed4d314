import math

import numpy as np
import pytest

from fsclb.agent import BanditParams, FSCLBAgent, check_arms, compute_beta
from fsclb.errors import InvalidConfidence, InvalidVector, NoArms, ProtocolError
from fsclb.protocol import DownloadMsg
from fsclb.server import FSCLBServer


def agent(d=6, l=2, M=1, **kw):
    return FSCLBAgent(0, BanditParams(d=d, l=l, M=M, **kw))


class TestBeta:
    def test_single_agent_noiseless(self):
        p = BanditParams(d=5, l=2, M=1, R=0.0)
        assert compute_beta(p, 0.0) == pytest.approx(2 * math.sqrt(2) + 1)

    def test_delta_term(self):
        p = BanditParams(d=5, l=2, M=3, lam=2.0, S_norm=1.5)
        assert compute_beta(p, p.lam) - compute_beta(p, 0.0) == pytest.approx(p.S_norm)

    def test_reference_scale_value(self):
        p = BanditParams(d=50, l=20, M=10, R=1.0, T=20000)
        m_t = math.sqrt(11) + 10 * math.sqrt(2)
        ref = m_t * (math.sqrt(50 * math.log((1 + 20000) / 0.01)) + 1) + 1
        assert compute_beta(p) == pytest.approx(ref, rel=1e-12)
        assert compute_beta(p) == pytest.approx(488.7, abs=0.05)

    def test_alpha_tilde_caps_at_one(self):
        lo = compute_beta(BanditParams(d=4, l=1, M=1, alpha=0.5, R=1.0))
        m_t = math.sqrt(1.5) + math.sqrt(1.0)
        ref = m_t * (math.sqrt(4 * math.log((1 + 20000 / 0.5) / 0.01)) + 1) + 1
        assert lo == pytest.approx(ref)

    @pytest.mark.parametrize("dc", [0.0, 1.0, -0.1, 2.0])
    def test_bad_confidence(self, dc):
        with pytest.raises(InvalidConfidence):
            compute_beta(BanditParams(d=4, l=1, M=1, delta_conf=dc))

    def test_negative_delta(self):
        with pytest.raises(ValueError):
            compute_beta(BanditParams(d=4, l=1, M=1), -1.0)


class TestParams:
    @pytest.mark.parametrize("kw", [dict(lam=0), dict(alpha=0), dict(d=0), dict(M=0)])
    def test_rejects(self, kw):
        base = dict(d=4, l=1, M=1)
        base.update(kw)
        with pytest.raises(ValueError):
            BanditParams(**base)

    @pytest.mark.parametrize("l", [0, 4, 5])
    def test_sketch_size(self, l):
        with pytest.raises(ValueError):
            FSCLBAgent(0, BanditParams(d=4, l=l, M=1))


class TestSelect:
    def test_bonus_prefers_longer_arm(self):
        a = agent(d=3, l=1, L=2.0)
        a.beta = 1.0
        assert a.select_arm([[1, 0, 0], [2, 0, 0]]) == 1

    def test_pure_exploitation(self):
        a = agent(d=3, l=1)
        a.beta = 0.0
        a.theta_hat = np.array([1.0, 0, 0])
        assert a.select_arm([[1, 0, 0], [0, 1, 0]]) == 0

    def test_tie_lowest_index(self):
        a = agent(d=3, l=1)
        assert a.select_arm([[0, 1, 0], [0, 1, 0], [0, 1, 0]]) == 0

    def test_errors(self):
        a = agent(d=3, l=1)
        with pytest.raises(NoArms):
            a.select_arm(np.zeros((0, 3)))
        with pytest.raises(InvalidVector):
            a.select_arm([[2.0, 0, 0]])
        with pytest.raises(InvalidVector):
            a.select_arm([[1.0, 0]])

    def test_check_arms_single_vector(self):
        assert check_arms([0.6, 0.8], 2, 1.0).shape == (1, 2)

    def test_scale_invariance(self, rng):
        a = agent(d=8, l=3)
        arms = rng.standard_normal((10, 8))
        arms /= np.linalg.norm(arms, axis=1, keepdims=True)
        for x in arms[:5]:
            a.local_update(x, 0.3)
        srv = FSCLBServer(a.params)
        down = srv.handle_upload(a.make_upload(1))
        a.apply_download(down)
        a.theta_hat = np.zeros(8)
        first = a.select_arm(arms)
        a.beta *= 17.0
        assert a.select_arm(arms) == first

    def test_quadform_matches_dense(self, rng):
        p = BanditParams(d=9, l=3, M=2)
        a, srv = FSCLBAgent(0, p), FSCLBServer(p)
        for _ in range(4):
            for x in rng.standard_normal((6, 9)) / 3.0:
                a.local_update(x, 0.1)
            a.apply_download(srv.handle_upload(a.make_upload(1)))
        X = rng.standard_normal((7, 9))
        ref = np.einsum("ij,ij->i", X, np.linalg.solve(a.policy_gram(), X.T).T)
        np.testing.assert_allclose(a.bonus_quadform(X), ref, rtol=1e-8)


class TestLocalUpdate:
    def test_first_pull(self):
        a = FSCLBAgent(0, BanditParams(d=3, l=2, M=1), theory=True)
        a.local_update([1, 0, 0], 1.0)
        np.testing.assert_array_equal(a.b_loc, [1, 0, 0])
        np.testing.assert_allclose(np.abs(a.local.S), [[1, 0, 0], [0, 0, 0]])
        np.testing.assert_array_equal(a.theory_gram, np.diag([1.0, 0, 0]))

    def test_zero_reward(self):
        a = agent(d=3, l=1)
        a.local_update([0, 1, 0], 0.0)
        np.testing.assert_array_equal(a.b_loc, 0)

    def test_rho_accumulates(self):
        a = agent(d=2, l=1)
        a.local_update([1, 0], 1.0)
        a.local_update([1, 0], 1.0)
        assert a.local.rho == pytest.approx(2.0)

    def test_bad_dimension(self):
        with pytest.raises(InvalidVector):
            agent(d=3, l=1).local_update([1, 0], 1.0)


class TestTrigger:
    def test_direct_branch_fires_via_rho(self):
        a = agent(d=2, l=1)
        assert not a.uses_svd_path
        a.local_update([1, 0], 1.0)
        log_det1, fire = a.evaluate_trigger()
        assert log_det1 == pytest.approx(math.log(4.0))
        assert fire

    def test_svd_branch_equality_does_not_fire(self):
        a = agent(d=6, l=2)
        assert a.uses_svd_path
        a.local_update([1, 0, 0, 0, 0, 0], 1.0)
        log_det1, fire = a.evaluate_trigger()
        assert log_det1 == pytest.approx(math.log(2.0), abs=1e-12)
        assert not fire

    def test_no_pulls_never_fires(self):
        for d, l in [(6, 2), (4, 3)]:
            a = agent(d=d, l=l)
            log_det1, fire = a.evaluate_trigger()
            assert log_det1 == pytest.approx(a.log_det_V, abs=1e-9)
            assert not fire

    def test_paths_agree(self, rng):
        p = BanditParams(d=12, l=3, M=2)
        srv = FSCLBServer(p)
        svd_a = FSCLBAgent(0, p, det_path="svd")
        den_a = FSCLBAgent(0, p, det_path="dense")
        for step in range(40):
            x = rng.standard_normal(12)
            x /= np.linalg.norm(x)
            for a in (svd_a, den_a):
                a.local_update(x, 0.5)
            ls, fs = svd_a.evaluate_trigger()
            ld, fd = den_a.evaluate_trigger()
            assert ls == pytest.approx(ld, abs=1e-9)
            ref = np.linalg.slogdet(svd_a.policy_gram() + svd_a.local_gram())[1]
            assert ls == pytest.approx(ref, abs=1e-8)
            if step % 7 == 6:
                down = srv.handle_upload(svd_a.make_upload(step))
                svd_a.apply_download(down)
                den_a.apply_download(down)

    def test_fire_is_monotone(self, rng):
        for seed in range(5):
            r = np.random.default_rng(seed)
            a = agent(d=10, l=3)
            fired = False
            for _ in range(60):
                x = r.standard_normal(10)
                a.local_update(x / np.linalg.norm(x), 0.0)
                f = a.evaluate_trigger()[1]
                assert f or not fired
                fired = fired or f

    def test_strict_threshold_direct(self):
        a = agent(d=4, l=3)
        a.log_det_V = 0.0
        a.local.rho = 0.0
        # equality case: det_1 == (1+alpha) det(V)
        a.S_m[:] = 0
        a.Delta = 0.0
        a.log_det_V = -math.log(2.0)
        log_det1, fire = a.evaluate_trigger()
        assert log_det1 == pytest.approx(0.0)
        assert not fire


class TestDownload:
    def test_initial_state_download(self):
        p = BanditParams(d=5, l=2, M=2)
        a = FSCLBAgent(0, p)
        init = dict(S=a.S_m.copy(), H=a.Hdiag.copy(), beta=a.beta, ld=a.log_det_V)
        a.local_update(np.eye(5)[0], 1.0)
        a.apply_download(FSCLBServer(p).download())
        np.testing.assert_array_equal(a.S_m, init["S"])
        np.testing.assert_array_equal(a.Hdiag, init["H"])
        assert a.beta == init["beta"] and a.log_det_V == init["ld"]
        assert a.local.rho == 0 and not a.b_loc.any() and not a.local.S.any()

    def test_worked_example(self):
        p = BanditParams(d=2, l=1, M=1)
        a = FSCLBAgent(0, p)
        msg = DownloadMsg(0, 1, np.zeros((1, 2)), np.array([0.5, 0.0]), math.log(4.0),
                          np.array([0.5]), 1.0)
        a.apply_download(msg)
        np.testing.assert_array_equal(a.theta_hat, [0.5, 0.0])
        assert a.Delta == 1.0 and a.log_det_V == pytest.approx(math.log(4))
        np.testing.assert_array_equal(a.Hdiag, [0.5])
        assert a.beta == pytest.approx(compute_beta(p, 1.0))

    def test_idempotent(self, rng):
        p = BanditParams(d=6, l=2, M=1)
        a, srv = FSCLBAgent(0, p, theory=True), FSCLBServer(p)
        for x in rng.standard_normal((5, 6)) / 3:
            a.local_update(x, 1.0)
        down = srv.handle_upload(a.make_upload(1))
        a.apply_download(down)
        snap = (a.S_m.copy(), a.Hdiag.copy(), a.theta_hat.copy(), a.beta, a.log_det_V, a.Delta)
        a.apply_download(down)
        assert all(np.array_equal(x, y) for x, y in
                   zip(snap, (a.S_m, a.Hdiag, a.theta_hat, a.beta, a.log_det_V, a.Delta)))
        assert not a.theory_gram.any()

    def test_policy_frozen_between_downloads(self, rng):
        a = agent(d=6, l=2)
        snap = (a.S_m.copy(), a.theta_hat.copy(), a.beta, a.log_det_V, a.Delta)
        for x in rng.standard_normal((5, 6)) / 3:
            a.local_update(x, 1.0)
            a.evaluate_trigger()
        assert np.array_equal(snap[0], a.S_m) and np.array_equal(snap[1], a.theta_hat)
        assert snap[2:] == (a.beta, a.log_det_V, a.Delta)

    def test_shape_mismatch(self):
        a = agent(d=3, l=1)
        bad = DownloadMsg(0, 1, np.zeros((2, 3)), np.zeros(3), 0.0, np.zeros(2), 0.0)
        with pytest.raises(ProtocolError):
            a.apply_download(bad)


def test_argmax_first_absorbs_roundoff():
    from fsclb.agent import argmax_first
    assert argmax_first([1.0, 1.0 + 1e-15, 0.5]) == 0
    assert argmax_first([1.0, 1.0 + 1e-6, 0.5]) == 1
    assert argmax_first([-3.0, -2.0]) == 1


def test_initial_prior_ties_unit_arms(rng):
    X = rng.standard_normal((10, 7))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    assert agent(d=7, l=2).select_arm(X) == 0
