"""Round loop, per-trial metrics, multi-trial aggregation and the invariant suite."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np

from . import kernels
from .agent import BanditParams, FSCLBAgent, compute_beta
from .baselines import FedLinAgent, FedLinServer, RandomAgent
from .config import ExperimentConfig
from .environments import Schedule, SyntheticEnv, load_dataset_csv
from .errors import ConfigError, FSCLBError, TrialError
from .protocol import CommLedger, InProcTransport, TcpTransport, fedlinucb_reference_volume, start_background_server
from .server import FSCLBServer
from .theory import TheoryMonitor

log = logging.getLogger(__name__)


@dataclass(slots=True)
class RoundRecord:
    t: int
    agent: int
    chosen_arm: int
    reward: float
    instant_regret: float
    cum_regret: float
    comm_fired: bool
    upload_scalars: int
    download_scalars: int
    trigger_eval_ns: int
    round_ns: int


COLUMNS = [f.name for f in fields(RoundRecord)]


@dataclass
class TrialResult:
    config: ExperimentConfig
    seed: int
    records: list
    ledger: object
    summary: dict
    trace: dict
    theory: dict | None = None

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def bandit_params(cfg: ExperimentConfig) -> BanditParams:
    return BanditParams(d=cfg.d, l=cfg.l, M=cfg.M, lam=cfg.lam, alpha=cfg.alpha,
                        delta_conf=cfg.delta_conf, R=cfg.R, S_norm=cfg.S_norm, L=cfg.L, T=cfg.T)


def make_server(init: dict):
    """Server factory shared by the in-process path and the TCP endpoint."""
    algo = init["algo"]
    params = BanditParams(**init["params"])
    if algo == "fsclb":
        return FSCLBServer(params, theory=init.get("theory", False),
                           shrink_index=init.get("shrink_index"))
    if algo == "fedlinucb":
        return FedLinServer(params)
    raise ConfigError(f"algo {algo!r} has no server")


def _init_payload(cfg: ExperimentConfig, params: BanditParams) -> dict:
    return {"algo": cfg.algo, "params": params.__dict__.copy(),
            "shrink_index": cfg.shrink_index, "theory": cfg.theory}


def build_env(cfg: ExperimentConfig, env_rng, noise_rng):
    if cfg.env.kind == "dataset":
        return load_dataset_csv(cfg.env.path, K=cfg.K, rng=env_rng)
    return SyntheticEnv(cfg.d, cfg.K, cfg.env.arm_rank, cfg.R, cfg.S_norm, env_rng, noise_rng)


def run_trial(cfg: ExperimentConfig, seed: int | None = None, transport=None) -> TrialResult:
    """Run one trial of ``cfg.T`` rounds.

    ``transport`` overrides ``cfg.transport`` (an already-connected client).
    """
    seed = cfg.seed if seed is None else seed
    env_ss, noise_ss, sched_ss, policy_ss, probe_ss = np.random.SeedSequence(seed).spawn(5)
    env = build_env(cfg, np.random.default_rng(env_ss), np.random.default_rng(noise_ss))
    if env.d != cfg.d:
        cfg = cfg.with_(d=env.d)
    params = bandit_params(cfg)
    schedule = Schedule(cfg.schedule.mode, cfg.M, cfg.schedule.block,
                        np.random.default_rng(sched_ss))

    server = None
    own_transport = transport is None
    tcp_server = None
    if cfg.algo == "random":
        policy_rng = np.random.default_rng(policy_ss)
        agents = [RandomAgent(m, params, policy_rng) for m in range(cfg.M)]
    else:
        if cfg.algo == "fsclb":
            agents = [FSCLBAgent(m, params, cfg.theory, cfg.det_path, cfg.shrink_index)
                      for m in range(cfg.M)]
        else:
            agents = [FedLinAgent(m, params) for m in range(cfg.M)]
        if transport is None:
            if cfg.transport == "tcp":
                if cfg.theory:
                    raise ConfigError("theory mode needs the in-process transport")
                tcp_server = start_background_server(make_server, cfg.host, cfg.port)
                transport = TcpTransport(cfg.host, tcp_server.port, _init_payload(cfg, params))
            else:
                server = make_server(_init_payload(cfg, params))
                transport = InProcTransport(server)
        elif isinstance(transport, InProcTransport):
            server = transport.server

    monitor = None
    if cfg.theory:
        if cfg.algo != "fsclb" or server is None:
            raise ConfigError("theory mode is only defined for in-process fsclb runs")
        monitor = TheoryMonitor(params, server, getattr(env, "theta_star", None),
                                rng=np.random.default_rng(probe_ss))
        pulled_gram = np.zeros((cfg.d, cfg.d))

    T = cfg.T
    records = []
    trace = {name: np.zeros(T) for name in ("rho_loc", "rho_ser", "rho_tilde_ser", "Delta")}
    timings = cfg.record_timings
    cum_regret = 0.0
    cum_reward = 0.0
    wall0 = time.perf_counter()
    try:
        for t in range(1, T + 1):
            r0 = time.perf_counter_ns()
            m = schedule.next(t)
            agent = agents[m]
            try:
                ctx = env.step(t)
                i = agent.select_arm(ctx.arms)
                x = ctx.arms[i]
                r = env.reward(ctx, i)
                agent.local_update(x, r)
                if monitor is not None:
                    pulled_gram += np.outer(x, x)
                    monitor.after_update(agent, t)
                t0 = time.perf_counter_ns()
                log_det1, fire = agent.evaluate_trigger()
                trig_ns = time.perf_counter_ns() - t0
                up_n = down_n = 0
                if monitor is not None:
                    monitor.after_trigger(agent, t, log_det1, fire)
                if fire:
                    upload = agent.make_upload(t)
                    if monitor is not None:
                        monitor.before_upload(agent)
                    before = transport.ledger.uploaded_scalars, transport.ledger.downloaded_scalars
                    reply = transport.request(upload)
                    up_n = transport.ledger.uploaded_scalars - before[0]
                    down_n = transport.ledger.downloaded_scalars - before[1]
                    if isinstance(agent, FSCLBAgent):
                        trace["rho_loc"][t - 1] = upload.rho_loc
                    agent.apply_download(reply)
                    if monitor is not None:
                        monitor.after_download(agent, t)
                elif isinstance(agent, FSCLBAgent):
                    trace["rho_loc"][t - 1] = agent.local.rho
            except FSCLBError as exc:
                raise TrialError(str(exc), t, m) from exc
            if isinstance(agent, FSCLBAgent):
                trace["Delta"][t - 1] = agent.Delta
            if server is not None and isinstance(server, FSCLBServer):
                trace["rho_ser"][t - 1] = server.rho_ser
                trace["rho_tilde_ser"][t - 1] = server.rho_tilde
            inst = float(ctx.best_value - ctx.expected[i])
            cum_regret += inst
            cum_reward += r
            round_ns = time.perf_counter_ns() - r0
            records.append(RoundRecord(t, m, i, r, inst, cum_regret, bool(fire), up_n, down_n,
                                       trig_ns if timings else 0, round_ns if timings else 0))
    finally:
        if own_transport and transport is not None:
            transport.close()
        if tcp_server is not None:
            tcp_server.shutdown()
            tcp_server.server_close()
    wall = time.perf_counter() - wall0

    # Random never talks to a server; an empty ledger keeps the interface uniform
    ledger = transport.ledger if transport is not None else CommLedger()
    theory = None
    if monitor is not None:
        monitor.finish(pulled_gram, ledger.switching_count)
        theory = monitor.report()
    result = TrialResult(cfg, seed, records, ledger, {}, trace, theory)
    result.summary = summarize(result, params, wall)
    return result


def summarize(result: TrialResult, params: BanditParams, wall: float) -> dict:
    cfg = result.config
    regret = result.column("instant_regret")
    trig = result.column("trigger_eval_ns")
    half = len(regret) // 2
    ledger = result.ledger.as_dict()
    s = {
        "algo": cfg.algo,
        "seed": result.seed,
        "T": cfg.T,
        "cum_regret": float(regret.sum()),
        "cum_reward": float(result.column("reward").sum()),
        "regret_first_half": float(regret[:half].sum()),
        "regret_second_half": float(regret[half:].sum()),
        **ledger,
        "com_T": ledger["total_scalars"],
        "wall_time_s": wall,
        "trigger_ns_median": float(np.median(trig)) if cfg.algo != "random" else 0.0,
        "trigger_ns_total": int(trig.sum()),
        "round_ns_total": int(result.column("round_ns").sum()),
        "max_rho_loc": float(result.trace["rho_loc"].max()),
        "max_rho_ser": float(result.trace["rho_ser"].max()),
        "max_rho_tilde_ser": float(result.trace["rho_tilde_ser"].max()),
        "final_Delta": float(result.trace["Delta"][-1]),
        "beta_initial": compute_beta(params, 0.0),
        "kernel_backend": kernels.BACKEND,
    }
    if cfg.algo == "fsclb":
        s["volume_per_comm"] = 2 * cfg.l * cfg.d + 2 * cfg.d + cfg.l + 3
    elif cfg.algo == "fedlinucb":
        s["volume_per_comm"] = 2 * cfg.d * cfg.d + cfg.d + 1
        s["reference_volume_per_comm"] = fedlinucb_reference_volume(cfg.d)
        s["reference_com_T"] = ledger["switching_count"] * fedlinucb_reference_volume(cfg.d)
        s["beta_convention"] = "shared confidence radius with Delta=0"
    return s


# ------------------------------------------------------------ aggregation

CURVE_COLUMNS = ("cum_regret", "cum_reward", "cum_scalars", "cum_round_ns")


def trial_curves(result: TrialResult) -> dict:
    scalars = result.column("upload_scalars") + result.column("download_scalars")
    return {
        "cum_regret": result.column("cum_regret"),
        "cum_reward": np.cumsum(result.column("reward")),
        "cum_scalars": np.cumsum(scalars),
        "cum_round_ns": np.cumsum(result.column("round_ns")),
    }


def _config_key(cfg_dict: dict) -> dict:
    return {k: v for k, v in cfg_dict.items() if k not in ("seed", "trials")}


def aggregate_trials(results) -> dict:
    """Mean and sample std of every numeric summary metric, plus pointwise-mean curves.

    Accepts :class:`TrialResult` objects or bare summary dicts (the latter
    produce no curves).  Summaries from different configurations are refused.
    """
    results = list(results)
    if not results:
        raise ConfigError("nothing to aggregate")
    summaries, configs = [], []
    for r in results:
        if isinstance(r, TrialResult):
            summaries.append(r.summary)
            configs.append(_config_key(r.config.to_dict()))
        else:
            summaries.append(r)
            if "config" in r:
                configs.append(_config_key(r["config"]))
    if any(c != configs[0] for c in configs[1:]):
        raise ConfigError("cannot aggregate trials from different configurations")
    algos = {s.get("algo") for s in summaries}
    if len(algos) > 1:
        raise ConfigError(f"cannot aggregate different algorithms: {sorted(map(str, algos))}")

    metrics = {}
    keys = [k for k, v in summaries[0].items()
            if isinstance(v, (int, float)) and not isinstance(v, bool) and k != "seed"]
    for k in keys:
        vals = np.array([float(s[k]) for s in summaries])
        std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        metrics[k] = {"mean": float(vals.mean()), "std": std}
    report = {"n_trials": len(summaries), "metrics": metrics}

    trials = [r for r in results if isinstance(r, TrialResult)]
    if trials:
        curves = [trial_curves(r) for r in trials]
        report["curves"] = {
            name: {
                "mean": np.mean([c[name] for c in curves], axis=0),
                "std": (np.std([c[name] for c in curves], axis=0, ddof=1)
                        if len(curves) > 1 else np.zeros(len(curves[0][name]))),
            }
            for name in CURVE_COLUMNS
        }
    return report


def run_experiment(cfg: ExperimentConfig, connect: tuple[str, int] | None = None
                   ) -> list[TrialResult]:
    """Run ``cfg.trials`` trials with seeds ``seed, seed + 1, ...``.

    With ``connect=(host, port)`` every trial opens its own session to an
    already running server instead of hosting one.
    """
    out = []
    for k in range(cfg.trials):
        if connect is not None and cfg.algo != "random":
            params = bandit_params(cfg)
            with TcpTransport(connect[0], connect[1], _init_payload(cfg, params)) as tr:
                res = run_trial(cfg, cfg.seed + k, transport=tr)
        else:
            res = run_trial(cfg, cfg.seed + k)
        log.info("trial %d/%d: regret %.2f, comms %d", k + 1, cfg.trials,
                 res.summary["cum_regret"], res.summary["switching_count"])
        out.append(res)
    return out


# ----------------------------------------------------------------- output

def write_rounds_csv(result: TrialResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for r in result.records:
            row = astuple(r)
            w.writerow([repr(v) if isinstance(v, float) else int(v) if isinstance(v, bool) else v
                        for v in row])


def write_curves_csv(report: dict, path) -> None:
    curves = report["curves"]
    n = len(curves["cum_regret"]["mean"])
    header = ["t"] + [f"{c}_{s}" for c in CURVE_COLUMNS for s in ("mean", "std")]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(n):
            w.writerow([i + 1] + [repr(float(curves[c][s][i]))
                                  for c in CURVE_COLUMNS for s in ("mean", "std")])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_outputs(results: list[TrialResult], out_dir) -> dict:
    """``rounds.csv`` (or ``rounds_<k>.csv`` per trial), ``curves.csv`` and ``summary.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k, res in enumerate(results):
        name = "rounds.csv" if len(results) == 1 else f"rounds_{k}.csv"
        write_rounds_csv(res, out / name)
    report = aggregate_trials(results)
    write_curves_csv(report, out / "curves.csv")
    summary = {
        "config": results[0].config.to_dict(),
        "trials": [r.summary for r in results],
        "aggregate": report["metrics"],
        "ledger": [r.ledger.as_dict() for r in results],
    }
    theory = [r.theory for r in results if r.theory is not None]
    if theory:
        summary["theory"] = theory
    (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2))
    return summary


# -------------------------------------------------------- invariant suite

def invariant_suite(cfg: ExperimentConfig, seed: int | None = None) -> dict:
    """Run one in-process FSCLB trial with every theory check switched on."""
    if cfg.d > 32 or cfg.T > 5000:
        raise ConfigError("the invariant suite runs at desk scale (d <= 32, T <= 5000)")
    cfg = cfg.with_(algo="fsclb", theory=True, transport="inproc")
    res = run_trial(cfg, seed)
    report = res.theory
    rank = cfg.env.arm_rank
    if rank is not None and rank + 1 <= cfg.l:
        zero = (res.summary["max_rho_loc"] == 0.0 and res.summary["max_rho_ser"] == 0.0
                and res.summary["max_rho_tilde_ser"] == 0.0 and report["eps_hat"] == 0.0)
        report["checks"]["zero_truncation_regime"] = {
            "passed": zero, "evaluations": 1, "failures": int(not zero),
            "worst_residual": max(res.summary["max_rho_loc"], res.summary["max_rho_ser"],
                                  res.summary["max_rho_tilde_ser"], report["eps_hat"]),
            "first_failure": None if zero else "nonzero truncation mass",
        }
        report["passed"] = report["passed"] and zero
    report["summary"] = res.summary
    return report
