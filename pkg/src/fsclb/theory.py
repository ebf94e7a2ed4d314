"""Runtime checks of the PSD sandwiches, oracles and bounds behind FSCLB.

The monitor is fed by the round loop when ``theory`` mode is on and keeps, per
named check, the number of evaluations, the number of failures and the worst
residual (for PSD checks: smallest eigenvalue of ``A - B`` over ``1 + ||A||``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spectral import gram_spectrum, min_eig_gap, spectral_error


@dataclass
class CheckStat:
    evaluations: int = 0
    failures: int = 0
    worst: float = math.inf
    first_failure: str | None = None

    @property
    def passed(self) -> bool:
        return self.failures == 0


def comm_bound(d, M, alpha, T, L, lam, eps_l) -> float:
    """Upper bound on the number of communications over ``T`` rounds."""
    return 2 * d * (M + 1.0 / alpha) * math.log((1.0 + eps_l) * (1.0 + T * L ** 2 / (lam * d)))


class TheoryMonitor:
    def __init__(self, params, server, theta_star=None, psd_tol=1e-7, num_tol=1e-8,
                 rng=None):
        self.p = params
        self.server = server
        self.theta_star = theta_star
        self.psd_tol = psd_tol
        self.num_tol = num_tol
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.stats: dict[str, CheckStat] = {}
        self.extra: dict = {}
        self._pre = None
        self._inc = None

    def _stat(self, name):
        return self.stats.setdefault(name, CheckStat())

    def _record(self, name, residual, ok, where):
        st = self._stat(name)
        st.evaluations += 1
        st.worst = min(st.worst, residual)
        if not ok:
            st.failures += 1
            if st.first_failure is None:
                st.first_failure = f"{where}: residual {residual:.3e}"

    def psd(self, name, A, B, where=""):
        gap = min_eig_gap(A, B)
        scale = 1.0 + np.linalg.norm(A, 2)
        self._record(name, gap / scale, gap >= -self.psd_tol * scale, where)

    def close(self, name, value, reference, where="", absolute=False):
        value = np.asarray(value, dtype=np.float64)
        reference = np.asarray(reference, dtype=np.float64)
        err = float(np.max(np.abs(value - reference)))
        if not absolute:
            err /= max(float(np.max(np.abs(reference))), 1e-300)
        self._record(name, -err, err <= self.num_tol, where)

    def bound(self, name, value, limit, where=""):
        self._record(name, limit - value, value <= limit, where)

    # -- hooks called from the round loop

    def after_update(self, agent, t):
        G = agent.theory_gram
        where = f"t={t} agent={agent.id}"
        self.psd("scfd_over_approx", agent.local_gram(), G, where)
        self.psd("scfd_under_approx", G, agent.local.S.T @ agent.local.S, where)

    def after_trigger(self, agent, t, log_det1, fired):
        where = f"t={t} agent={agent.id}"
        dense = np.linalg.slogdet(agent.policy_gram() + agent.local_gram())[1]
        self.close("trigger_logdet_oracle", log_det1, dense, where, absolute=True)
        if not fired:
            self.psd("sketch_cov_comparison", self.server.gram(),
                     agent.local_gram() / self.p.alpha, where)

    def before_upload(self, agent):
        self._pre = self.server.gram()
        self._inc = agent.local_gram()

    def after_download(self, agent, t):
        p, srv = self.p, self.server
        where = f"t={t} agent={agent.id}"
        post = srv.gram()
        self.psd("server_monotonicity", post, self._pre, where)
        upper = srv.theory_gram + (p.lam + srv.Delta_ser) * np.eye(p.d)
        lower = srv.theory_gram + p.lam * np.eye(p.d)
        self.psd("sandwich_upper", upper, post, where)
        self.psd("sandwich_lower", post, lower, where)
        if p.alpha >= 1:
            # with alpha < 1 the freshly uploaded increment may exceed alpha * V
            self.psd("fired_cov_comparison", post, self._inc / p.alpha, where)
        self.close("theta_oracle", srv.theta_hat, np.linalg.solve(post, srv.b_ser), where)
        self.close("logdet_oracle", srv.log_det_V, np.linalg.slogdet(post)[1], where,
                   absolute=True)
        probe = self.rng.standard_normal((4, p.d))
        dense_q = np.einsum("ij,ij->i", probe, np.linalg.solve(agent.policy_gram(), probe.T).T)
        self.close("woodbury_quadform", agent.bonus_quadform(probe), dense_q, where)
        if self.theta_star is not None and p.R == 0:
            err = agent.theta_hat - self.theta_star
            norm = math.sqrt(max(float(err @ agent.policy_gram() @ err), 0.0))
            self.bound("confidence_containment", norm, agent.beta, where)

    def finish(self, pulled_gram, comm_count):
        p = self.p
        eps = spectral_error(gram_spectrum(pulled_gram), p.lam, p.l)
        limit = comm_bound(p.d, p.M, p.alpha, p.T, p.L, p.lam, eps)
        self.extra.update(eps_hat=eps, comm_bound=limit, comm_count=comm_count)
        self.bound("comm_count_bound", comm_count, limit, "end of run")

    def report(self) -> dict:
        checks = {
            name: {
                "passed": st.passed,
                "evaluations": st.evaluations,
                "failures": st.failures,
                "worst_residual": st.worst,
                "first_failure": st.first_failure,
            }
            for name, st in sorted(self.stats.items())
        }
        return {"passed": all(st.passed for st in self.stats.values()),
                "checks": checks, **self.extra}
