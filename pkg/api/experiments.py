'''
Experiment runners behind the command-line subcommands.

  train         one learning run, convergence curve + checkpoint
  sweep         every (p_stay, scheme, replica) job, average sum rates
  oracle-check  tabular and deep agents against the value-iteration oracle

Sweep jobs go through votakvot's process runner; the results are merged and
written here, in the calling process.
'''
from __future__ import annotations

import logging
import tempfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import votakvot

from models.agents import (
    baseline_no_cache_train,
    greedy_policy,
    policy_agreement,
    policy_value,
    run_myopic_static,
    run_tabular_q_learning,
    train,
    value_iteration_oracle,
)
from models.fsmc_channel import write_transition_csv
from models.neural_q import save_checkpoint

from .config_parsing import SCHEMES, parse_config_text, serialize_config
from .result_writers import (
    format_q_table,
    write_convergence_csv,
    write_convergence_plot_script,
    write_oracle_report,
    write_run_records,
    write_sweep_csv,
    write_sweep_plot_script,
)

logger = logging.getLogger(__name__)

FINAL_WINDOW_FRACTION = 0.1
DQN_AGREEMENT_MIN = 0.9
DQN_RETURN_RATIO_MIN = 0.95
# the sampled learner's 1/(1+visits) rates leave a bias of a few percent at the default slot count
TABULAR_VALUE_TOL = 0.05
TABULAR_TIE_TOL = 0.005
ORACLE_L = 2
ORACLE_H = 3


@dataclass
class RunRecord:
    scheme: str
    p_stay: float
    replica: int
    replica_seed: int
    sum_rates: list = field(default_factory=list)
    avg_sum_rate: float = 0.0


@dataclass
class OracleReport:
    passed: bool
    tabular_agreement: float
    tabular_exact_agreement: float
    tabular_value_gap: float
    dqn_agreement: float
    dqn_return_ratio: float
    lines: list


def replica_seed(seed, replica):
    """Seed of one replica, independent of which job or process runs it."""
    return int(np.random.SeedSequence([seed, replica]).generate_state(1, dtype=np.uint64)[0])


def average_sum_rate(curve, slots_per_episode):
    # mean per-slot reward over the final 10% of episodes
    if not curve:
        return 0.0
    n = max(1, int(np.ceil(FINAL_WINDOW_FRACTION * len(curve))))
    return float(np.mean(curve[-n:]) / slots_per_episode)


def run_scheme(scheme, env_cfg, hyper, rng):
    if scheme == "with-cache":
        return train(env_cfg, hyper, rng)
    if scheme == "no-cache":
        return baseline_no_cache_train(env_cfg, hyper, rng)
    if scheme == "myopic-static":
        return run_myopic_static(env_cfg, hyper, rng)
    raise ValueError(f"Unknown scheme {scheme!r}")


def _prepare_out_dir(cfg):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(serialize_config(cfg), encoding="utf-8")
    return out


def cli_train(cfg):
    """Train the configured scheme once and write convergence.csv (+ checkpoint for learners)."""
    out = _prepare_out_dir(cfg)
    logger.info(
        "Training %s: L=%d, H=%d, %d episodes x %d slots, seed %d",
        cfg.scheme, cfg.env.L, cfg.env.H, cfg.hyper.episodes, cfg.env.T, cfg.seed,
    )
    result = run_scheme(cfg.scheme, cfg.env, cfg.hyper, np.random.default_rng(cfg.seed))

    files = {
        "convergence": write_convergence_csv(result.curve, out / "convergence.csv"),
        "plot": write_convergence_plot_script("convergence.csv", out / "convergence.gp"),
    }
    write_transition_csv(cfg.env.transition, out / "transition_matrix.csv")
    files["transition"] = out / "transition_matrix.csv"
    if result.params is not None:
        files["checkpoint"] = out / "q_network.iaqnet"
        save_checkpoint(result.params, files["checkpoint"])
    logger.info("Final average sum rate %.4f bits/s/Hz per slot", average_sum_rate(result.curve, cfg.env.T))
    return files


def sweep_job(scheme, p_stay, replica, config_text):
    """
    One sweep point. The experiment config travels as its serialized text so
    the job's parameters stay plain values.
    """
    cfg = parse_config_text(config_text)
    env_cfg = replace(cfg.env, p_stay=p_stay)
    r_seed = replica_seed(cfg.seed, replica)
    logger.info("Sweep job start: scheme=%s p_stay=%s replica=%d", scheme, p_stay, replica)
    result = run_scheme(scheme, env_cfg, cfg.hyper, np.random.default_rng(r_seed))
    record = RunRecord(scheme, p_stay, replica, r_seed, list(result.curve), average_sum_rate(result.curve, env_cfg.T))
    logger.info("Sweep job done: scheme=%s p_stay=%s replica=%d avg=%.4f", scheme, p_stay, replica, record.avg_sum_rate)
    return record


@votakvot.track()
def tracked_sweep_job(scheme, p_stay, replica, config_text):
    return asdict(sweep_job(scheme, p_stay, replica, config_text))


def sweep_jobs(cfg):
    config_text = serialize_config(cfg)
    return [
        {"scheme": scheme, "p_stay": p_stay, "replica": replica, "config_text": config_text}
        for p_stay in cfg.sweep_p_stay
        for scheme in SCHEMES
        for replica in range(cfg.replicas)
    ]


def _run_tracked(jobs, max_workers):
    records = []
    with tempfile.TemporaryDirectory(prefix="ia_cache_rl_sweep_") as store:
        votakvot.init(runner="process", path=store)
        # at most max_workers jobs are handed to the runner at once
        for start in range(0, len(jobs), max_workers):
            for t in tracked_sweep_job.multi(jobs[start:start + max_workers]):
                if t.result is None:
                    params = dict(t.params)
                    raise RuntimeError(
                        f"Sweep job scheme={params.get('scheme')} p_stay={params.get('p_stay')} "
                        f"replica={params.get('replica')} returned no result"
                    )
                records.append(RunRecord(**t.result))
    return records


def cli_sweep(cfg, max_workers=1):
    """All sweep jobs, on votakvot's process runner when max_workers > 1."""
    if not cfg.sweep_p_stay:
        raise ValueError("sweep_p_stay is empty")
    out = _prepare_out_dir(cfg)
    jobs = sweep_jobs(cfg)
    logger.info("Sweep: %d jobs on %d worker(s)", len(jobs), max_workers)

    if max_workers > 1:
        records = _run_tracked(jobs, max_workers)
    else:
        records = [sweep_job(**job) for job in jobs]
    records.sort(key=lambda r: (r.p_stay, SCHEMES.index(r.scheme), r.replica))

    write_sweep_csv(records, out / "sweep.csv")
    write_sweep_plot_script("sweep.csv", SCHEMES, out / "sweep.gp")
    write_run_records(records, out / "run_records.json")
    return records


def cli_oracle_check(cfg, corrupt_discount=None) -> OracleReport:
    """
    Compare the tabular learner and the deep agent with the value-iteration
    oracle on the L=2, H=3 instance. `corrupt_discount` feeds the tabular
    learner a wrong discount to show the check can fail.

    The tabular learner samples the environment for `cfg.tabular_slots`
    slots. Its policy counts as agreeing on a state when the chosen action is
    the oracle's or ties with it within TABULAR_TIE_TOL of the value scale.
    """
    out = _prepare_out_dir(cfg)
    small = replace(cfg.env, L=ORACLE_L, H=ORACLE_H)
    discount = cfg.hyper.discount
    rng = np.random.default_rng(cfg.seed)

    oracle = value_iteration_oracle(small, cfg.mc_samples, rng, discount=discount)
    v_scale = max(1.0, float(np.max(np.abs(oracle.values))))

    tab_discount = discount if corrupt_discount is None else corrupt_discount
    tabular = run_tabular_q_learning(small, tab_discount, rng, cfg.tabular_slots)
    tab_policy = tabular.greedy_policy()
    tab_exact = policy_agreement(oracle, tab_policy)
    tab_agreement = policy_agreement(oracle, tab_policy, tie_tol=TABULAR_TIE_TOL * v_scale)
    tab_gap = float(np.max(np.abs(tabular.values.max(axis=1) - oracle.values)))
    min_visits = int(tabular.visits.min())

    dqn = train(small, cfg.hyper, rng)
    dqn_policy = greedy_policy(dqn.params, oracle.states, small.H)
    dqn_agreement = policy_agreement(oracle, dqn_policy)
    dqn_values = policy_value(oracle, dqn_policy)
    dqn_ratio = float(np.mean(dqn_values) / np.mean(oracle.values)) if np.mean(oracle.values) > 0 else 1.0

    passed = (
        tab_agreement == 1.0
        and tab_gap <= TABULAR_VALUE_TOL * v_scale
        and dqn_agreement >= DQN_AGREEMENT_MIN
        and dqn_ratio >= DQN_RETURN_RATIO_MIN
    )

    lines = [
        f"Oracle check on L={small.L}, H={small.H}, p_hit={small.p_hit}, discount={discount}",
        f"  states: {len(oracle.states)}, actions: {small.n_actions}, MC samples: {cfg.mc_samples}",
        f"  tabular: policy agreement {tab_agreement:.2%} ({tab_exact:.2%} exact), max value gap {tab_gap:.6f} "
        f"(limit {TABULAR_VALUE_TOL * v_scale:.6f}), {cfg.tabular_slots} slots, "
        f"min visits {min_visits}, discount {tab_discount}",
        f"  deep Q: policy agreement {dqn_agreement:.2%} (min {DQN_AGREEMENT_MIN:.0%}), "
        f"mean return ratio {dqn_ratio:.4f} (min {DQN_RETURN_RATIO_MIN})",
        f"  result: {'PASS' if passed else 'FAIL'}",
        "",
    ]
    lines += format_q_table(oracle.states, oracle.q_values, "Oracle Q*")
    lines += format_q_table(oracle.states, tabular.values, "Tabular Q")
    lines += format_q_table(oracle.states, dqn_values[:, None], "Deep Q policy value")
    write_oracle_report(lines, out / "oracle_report.txt")

    return OracleReport(passed, tab_agreement, tab_exact, tab_gap, dqn_agreement, dqn_ratio, lines)
