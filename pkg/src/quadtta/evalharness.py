"""Deployment-condition evaluation: the 13-condition mismatch suite, the
adaptation-step-size ablation, and plot-ready per-step time series.

Episodes run the deterministic (mean-action) policy against a fixed
perturbation at the 7 m curriculum-ceiling goal distance. Per-episode rngs
derive from (seed, episode index), so conditions share paired goal draws
and reports are byte-identical across reruns. Evaluation never mutates the
checkpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import simcore
from .nets import NetSet
from .rollout import EpisodeRunner
from .simcore import ID_CONDITIONS, OOD_CONDITIONS, MismatchConfig, PhysicalParams, mismatch_condition
from .tasks import Curriculum, Outcome, MAX_STEPS

__all__ = [
    "EVAL_GOAL_DISTANCE",
    "ABLATION_ALPHAS",
    "ABLATION_CONDITIONS",
    "EpisodeRecord",
    "ConditionResult",
    "eval_condition",
    "run_mismatch_suite",
    "run_alpha_ablation",
    "emit_timeseries",
]

EVAL_GOAL_DISTANCE = 7.0  # curriculum ceiling, the hardest trained regime
ABLATION_ALPHAS = (0.0, 0.02, 0.1)
ABLATION_CONDITIONS = ("mass+30", "mass+40", "combined-hard", "combined-ood")
SUITE_HEADER = "condition,group,episodes,successes,sr_pct,mean_steps,mean_final_dist_m"
ABLATION_HEADER = "alpha,condition,episodes,successes,sr_pct,mean_steps,mean_final_dist_m"
TIMESERIES_HEADER = "condition,step,dist_mean,dist_std,znorm_mean,znorm_std"


@dataclass
class EpisodeRecord:
    episode: int
    outcome: Outcome
    steps: int
    final_dist: float
    dist_trace: list[float] | None = None
    znorm_trace: list[float] | None = None


@dataclass
class ConditionResult:
    name: str
    group: str
    episodes: int
    successes: int
    records: list[EpisodeRecord] = field(default_factory=list)

    @property
    def sr_pct(self) -> float:
        return 100.0 * self.successes / self.episodes

    @property
    def mean_steps(self) -> float:
        """Mean steps to success over successful episodes (NaN if none)."""
        steps = [r.steps for r in self.records if r.outcome is Outcome.SUCCESS]
        return float(np.mean(steps)) if steps else math.nan

    @property
    def mean_final_dist(self) -> float:
        return float(np.mean([r.final_dist for r in self.records]))


def _episode_rng(seed: int, episode: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, episode])))


def _run_episode(
    nets: NetSet,
    task_id: int,
    mismatch: MismatchConfig,
    alpha: float,
    rng: np.random.Generator,
    params: PhysicalParams,
    goal_distance: float,
    record_traces: bool,
) -> EpisodeRecord:
    runner = EpisodeRunner(task_id, params=params, latent_dim=nets.dims.latent_dim, alpha=alpha)
    runner.reset(Curriculum(distance=goal_distance), mismatch, rng)
    task_arr = np.array([task_id], dtype=np.int64)
    goal = runner.spec.goal

    dist_trace = znorm_trace = None
    if record_traces:
        dist_trace = [float(np.linalg.norm(goal - runner.state.p))]
        znorm_trace = [0.0]

    outcome = Outcome.RUNNING
    while True:
        obs = runner.observe()[None, :]
        g = nets.encoder.encode(task_arr, obs)
        inp = np.concatenate([runner.state_vector()[None, :], g, runner.z[None, :]], axis=1)
        mean = nets.policy.forward(inp)[0]
        res = runner.step(mean)
        trans = np.concatenate([res.x_prev, res.u_cmd, res.x_next]).astype(np.float32)
        delta = nets.tta.forward(trans[None, :])[0]
        runner.advance_latent(delta, trans)
        if record_traces:
            dist_trace.append(float(np.linalg.norm(goal - runner.state.p)))
            znorm_trace.append(float(np.linalg.norm(runner.z)))
        if res.done:
            outcome = res.outcome
            break

    return EpisodeRecord(
        episode=0,
        outcome=outcome,
        steps=runner.ep.step,
        final_dist=float(np.linalg.norm(goal - runner.state.p)),
        dist_trace=dist_trace,
        znorm_trace=znorm_trace,
    )


def eval_condition(
    nets: NetSet,
    condition: MismatchConfig,
    task_id: int,
    n_episodes: int,
    alpha: float,
    seed: int,
    params: PhysicalParams = simcore.DEFAULT_PARAMS,
    name: str = "",
    group: str = "",
    record_traces: bool = False,
    goal_distance: float = EVAL_GOAL_DISTANCE,
) -> ConditionResult:
    """Run n deterministic episodes under one fixed perturbation."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    result = ConditionResult(name=name, group=group, episodes=n_episodes, successes=0)
    for ep_idx in range(n_episodes):
        rec = _run_episode(
            nets,
            task_id,
            condition,
            alpha,
            _episode_rng(seed, ep_idx),
            params,
            goal_distance,
            record_traces,
        )
        rec.episode = ep_idx
        if rec.outcome is Outcome.SUCCESS:
            result.successes += 1
        result.records.append(rec)
    return result


def _fmt(x: float, spec: str = ".6f") -> str:
    return format(x, spec)


def _aggregate_row(name: str, members: list[ConditionResult]) -> str:
    sr = float(np.mean([m.sr_pct for m in members]))
    steps = float(np.mean([m.mean_steps for m in members]))
    dist = float(np.mean([m.mean_final_dist for m in members]))
    episodes = sum(m.episodes for m in members)
    successes = sum(m.successes for m in members)
    return f"{name},aggregate,{episodes},{successes},{_fmt(sr)},{_fmt(steps)},{_fmt(dist)}"


def _write_report(out_path, comment: str, header: str, rows: list[str]) -> None:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join([comment, header, *rows]) + "\n")


def run_mismatch_suite(
    nets: NetSet,
    n_episodes: int,
    alpha: float,
    seed: int,
    out_path: str | Path | None,
    params: PhysicalParams = simcore.DEFAULT_PARAMS,
    task_id: int = 0,
    config_digest: str = "",
) -> dict[str, ConditionResult]:
    """All 13 conditions, in-distribution block first, then the aggregate
    rows (macro-averaged success rate, as in the published protocol)."""
    results: dict[str, ConditionResult] = {}
    rows: list[str] = []
    for group, names in (("id", ID_CONDITIONS), ("ood", OOD_CONDITIONS)):
        for cond_name in names:
            res = eval_condition(
                nets,
                mismatch_condition(cond_name),
                task_id,
                n_episodes,
                alpha,
                seed,
                params,
                name=cond_name,
                group=group,
            )
            results[cond_name] = res
            rows.append(
                f"{cond_name},{group},{res.episodes},{res.successes},"
                f"{_fmt(res.sr_pct)},{_fmt(res.mean_steps)},{_fmt(res.mean_final_dist)}"
            )
    id_members = [results[c] for c in ID_CONDITIONS]
    ood_members = [results[c] for c in OOD_CONDITIONS]
    rows.append(_aggregate_row("id-avg", id_members))
    rows.append(_aggregate_row("ood-avg", ood_members))
    rows.append(_aggregate_row("overall-avg", id_members + ood_members))

    if out_path is not None:
        comment = (
            f"# config_digest={config_digest} seed={seed} alpha={alpha} "
            f"episodes={n_episodes} checkpoint_digest={nets.weights_digest()}"
        )
        _write_report(out_path, comment, SUITE_HEADER, rows)
    return results


def run_alpha_ablation(
    nets: NetSet,
    seed: int,
    out_path: str | Path | None,
    n_episodes: int = 30,
    params: PhysicalParams = simcore.DEFAULT_PARAMS,
    task_id: int = 0,
    config_digest: str = "",
) -> dict[tuple[float, str], ConditionResult]:
    """Same checkpoint, adaptation step sizes {0, 0.02, 0.1}, four
    mismatch conditions spanning the in/out-of-distribution boundary."""
    results: dict[tuple[float, str], ConditionResult] = {}
    rows: list[str] = []
    digest_before = nets.weights_digest()
    for alpha in ABLATION_ALPHAS:
        members = []
        for cond_name in ABLATION_CONDITIONS:
            res = eval_condition(
                nets,
                mismatch_condition(cond_name),
                task_id,
                n_episodes,
                alpha,
                seed,
                params,
                name=cond_name,
                group="ablation",
            )
            results[(alpha, cond_name)] = res
            members.append(res)
            rows.append(
                f"{alpha:g},{cond_name},{res.episodes},{res.successes},"
                f"{_fmt(res.sr_pct)},{_fmt(res.mean_steps)},{_fmt(res.mean_final_dist)}"
            )
        sr = float(np.mean([m.sr_pct for m in members]))
        steps = float(np.mean([m.mean_steps for m in members]))
        dist = float(np.mean([m.mean_final_dist for m in members]))
        rows.append(
            f"{alpha:g},average,{sum(m.episodes for m in members)},"
            f"{sum(m.successes for m in members)},{_fmt(sr)},{_fmt(steps)},{_fmt(dist)}"
        )
    if nets.weights_digest() != digest_before:
        raise RuntimeError("evaluation must not mutate checkpoint weights")

    if out_path is not None:
        comment = (
            f"# config_digest={config_digest} seed={seed} episodes={n_episodes} "
            f"checkpoint_digest={digest_before}"
        )
        _write_report(out_path, comment, ABLATION_HEADER, rows)
    return results


def emit_timeseries(
    nets: NetSet,
    conditions: list[str],
    n_seeds: int,
    alpha: float,
    seed: int,
    out_path: str | Path,
    params: PhysicalParams = simcore.DEFAULT_PARAMS,
    task_id: int = 0,
    config_digest: str = "",
) -> None:
    """Per-step goal distance and latent norm, mean and std over n_seeds
    episodes per condition. Ended episodes hold their final values so every
    step has the full sample count; std columns are zero when n_seeds is 1."""
    rows: list[str] = []
    for cond_name in conditions:
        mismatch = mismatch_condition(cond_name)
        res = eval_condition(
            nets,
            mismatch,
            task_id,
            n_seeds,
            alpha,
            seed,
            params,
            name=cond_name,
            record_traces=True,
        )
        dists = np.full((n_seeds, MAX_STEPS + 1), np.nan)
        zns = np.full((n_seeds, MAX_STEPS + 1), np.nan)
        for i, rec in enumerate(res.records):
            trace_d = np.asarray(rec.dist_trace)
            trace_z = np.asarray(rec.znorm_trace)
            dists[i, : len(trace_d)] = trace_d
            dists[i, len(trace_d) :] = trace_d[-1]
            zns[i, : len(trace_z)] = trace_z
            zns[i, len(trace_z) :] = trace_z[-1]
        for step in range(MAX_STEPS + 1):
            rows.append(
                f"{cond_name},{step},{_fmt(float(dists[:, step].mean()))},"
                f"{_fmt(float(dists[:, step].std()))},{_fmt(float(zns[:, step].mean()))},"
                f"{_fmt(float(zns[:, step].std()))}"
            )
    comment = (
        f"# config_digest={config_digest} seed={seed} alpha={alpha} "
        f"seeds={n_seeds} checkpoint_digest={nets.weights_digest()}"
    )
    _write_report(out_path, comment, TIMESERIES_HEADER, rows)
