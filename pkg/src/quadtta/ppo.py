"""Clipped-surrogate PPO with GAE, entropy bonus, linear LR decay, and
parallel-environment rollouts under per-episode domain randomization.

The collector steps all environment instances in lockstep and batches every
network forward across them; a single optimizer updates policy, value,
subgoal encoder, task embeddings, and the adaptation head between rollouts.
The adaptation latent is rebuilt inside the update as
z = stopgrad(z_prev) + alpha * f(transition), which routes the surrogate
gradient into the adaptation head without backprop through the latent
recursion.

Everything is single-threaded and seeded: identical seed and config give
bit-identical checkpoints.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import simcore, tasks
from .nets import NetSet, NetDims, gaussian_entropy, gaussian_logp, save_netset
from .rollout import EpisodeRunner
from .simcore import DrRanges, MismatchConfig, PhysicalParams, sample_dr
from .tasks import Curriculum, Outcome
from .tta import CLAMP_BOUND, DEFAULT_ALPHA

__all__ = [
    "PpoConfig",
    "TrainSettings",
    "RolloutBuffer",
    "compute_gae",
    "normalize_advantages",
    "lr_schedule",
    "clip_global_norm",
    "Adam",
    "ppo_loss_and_grads",
    "ppo_update",
    "Trainer",
    "LOG_HEADER",
]

LOG_HEADER = (
    "iteration",
    "steps",
    "sr",
    "sr_ema",
    "curriculum_m",
    "mean_ep_len",
    "mean_reward",
    "loss_pi",
    "loss_v",
    "entropy",
    "lr",
)


@dataclass
class PpoConfig:
    """Optimization hyperparameters.

    rollout_steps_total counts transitions per iteration across all envs;
    the full-scale preset uses 131072 (4096 per env at 32 envs), the smoke
    preset 4096 total.
    """

    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    lr0: float = 3e-4
    entropy_coef: float = 1e-3
    value_coef: float = 0.5
    n_envs: int = 32
    rollout_steps_total: int = 4096
    epochs: int = 4
    minibatches: int = 8
    max_grad_norm: float = 0.5
    total_iterations: int = 250

    def validate(self) -> None:
        if self.rollout_steps_total % self.n_envs != 0:
            raise ValueError("rollout_steps_total must divide evenly across envs")
        if self.rollout_steps_total % self.minibatches != 0:
            raise ValueError("rollout_steps_total must divide evenly into minibatches")
        if self.total_iterations < 1:
            raise ValueError("total_iterations must be >= 1")

    @classmethod
    def smoke(cls, **overrides) -> "PpoConfig":
        return cls(**overrides)

    @classmethod
    def full_scale(cls, **overrides) -> "PpoConfig":
        values = dict(rollout_steps_total=131072, total_iterations=50)
        values.update(overrides)
        return cls(**values)


@dataclass
class TrainSettings:
    """Run-level choices that are not PPO hyperparameters."""

    task_ids: tuple[int, ...] = (0,)
    dr: DrRanges = field(default_factory=DrRanges)
    alpha: float = DEFAULT_ALPHA
    seed: int = 0
    out_dir: str | Path | None = None
    fixed_distance: float | None = None  # pin the goal radius, no curriculum growth
    checkpoint_every: int = 50
    config_digest: str = ""
    deterministic_single_thread: bool = True


def lr_schedule(lr0: float, iteration: int, total_iterations: int) -> float:
    """Linear decay from lr0 at the first iteration to 0 at the last."""
    if total_iterations <= 1:
        return lr0
    frac = 1.0 - iteration / (total_iterations - 1)
    return lr0 * max(0.0, frac)


def compute_gae(rewards, values, dones, bootstrap_value, gamma: float, lam: float):
    """Generalized advantage estimation over (T,) or (T, N) arrays.

    delta_t = r_t + gamma*V_{t+1}*(1-done_t) - V_t, accumulated with decay
    gamma*lam and reset at episode ends; truncated tails bootstrap with the
    supplied V(o_T), terminal steps bootstrap zero through the done mask.
    Returns (advantages, returns) in float64.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    squeeze = rewards.ndim == 1
    if squeeze:
        rewards, values, dones = rewards[:, None], values[:, None], dones[:, None]
        bootstrap = np.asarray([bootstrap_value], dtype=np.float64)
    else:
        bootstrap = np.asarray(bootstrap_value, dtype=np.float64)
    if not (rewards.shape == values.shape == dones.shape):
        raise ValueError("rewards, values, dones must share one shape")
    if bootstrap.shape != rewards.shape[1:]:
        raise ValueError("bootstrap_value must have one entry per env")

    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    gae = np.zeros(rewards.shape[1], dtype=np.float64)
    next_value = bootstrap.astype(np.float64)
    for t in range(T - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        gae = delta + gamma * lam * nonterminal * gae
        adv[t] = gae
        next_value = values[t]
    returns = adv + values
    if squeeze:
        return adv[:, 0], returns[:, 0]
    return adv, returns


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance normalization over the whole batch."""
    adv = np.asarray(adv, dtype=np.float64)
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is <= max_norm."""
    total = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= scale
    return total


class Adam:
    """Per-parameter adaptive optimizer with bias-corrected moments."""

    def __init__(
        self,
        params: dict[str, np.ndarray],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= (lr / b1c) * m / (np.sqrt(v / b2c) + self.eps)


@dataclass
class RolloutBuffer:
    """Per-(step, env) rollout storage plus the latent-replay context."""

    obs: np.ndarray
    x: np.ndarray
    task: np.ndarray
    z: np.ndarray
    z_base: np.ndarray
    trans: np.ndarray
    has_trans: np.ndarray
    action_raw: np.ndarray
    logp: np.ndarray
    reward: np.ndarray
    value: np.ndarray
    done: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @classmethod
    def allocate(cls, T: int, n: int, dims: NetDims) -> "RolloutBuffer":
        f4 = np.float32
        return cls(
            obs=np.zeros((T, n, dims.obs_dim), f4),
            x=np.zeros((T, n, dims.state_dim), f4),
            task=np.zeros((T, n), np.int64),
            z=np.zeros((T, n, dims.latent_dim), f4),
            z_base=np.zeros((T, n, dims.latent_dim), f4),
            trans=np.zeros((T, n, dims.tta_in), f4),
            has_trans=np.zeros((T, n), f4),
            action_raw=np.zeros((T, n, dims.action_dim), f4),
            logp=np.zeros((T, n), f4),
            reward=np.zeros((T, n), f4),
            value=np.zeros((T, n), f4),
            done=np.zeros((T, n), f4),
        )

    def flat(self) -> dict[str, np.ndarray]:
        T, n = self.reward.shape
        out = {}
        for name in (
            "obs",
            "x",
            "task",
            "z",
            "z_base",
            "trans",
            "has_trans",
            "action_raw",
            "logp",
        ):
            arr = getattr(self, name)
            out[name] = arr.reshape(T * n, *arr.shape[2:])
        out["adv"] = self.advantages.reshape(T * n).astype(np.float32)
        out["ret"] = self.returns.reshape(T * n).astype(np.float32)
        return out


def ppo_loss_and_grads(
    nets: NetSet,
    batch: dict[str, np.ndarray],
    clip_eps: float,
    entropy_coef: float,
    value_coef: float,
    alpha: float,
):
    """Clipped-surrogate + value + entropy loss with hand-derived gradients.

    Returns (stats, grads) where grads is keyed like nets.named_params().
    The latent each sample saw is rebuilt as
    clamp(z_base + alpha * f(transition)), so the adaptation head receives
    gradient through the policy's latent input (clamped or transition-free
    entries pass none).
    """
    obs, x = batch["obs"], batch["x"]
    task, z_base = batch["task"], batch["z_base"]
    trans, has = batch["trans"], batch["has_trans"]
    a_raw, logp_old = batch["action_raw"], batch["logp"]
    adv, ret = batch["adv"], batch["ret"]
    B = obs.shape[0]

    g, enc_cache = nets.encoder.encode_cached(task, obs)
    delta, tta_cache = nets.tta.mlp.forward_cached(trans)
    z_pre = z_base + alpha * delta * has[:, None]
    z = np.clip(z_pre, -CLAMP_BOUND, CLAMP_BOUND)
    inp = np.concatenate([x, g, z], axis=1)
    mean, pol_cache = nets.policy.mlp.forward_cached(inp)

    log_std = nets.policy.log_std
    std = np.exp(log_std)
    zscore = (a_raw - mean) / std
    logp_new = (-0.5 * zscore * zscore - log_std - 0.5 * math.log(2.0 * math.pi)).sum(axis=1)
    ratio = np.exp(logp_new - logp_old)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
    use_unclipped = surr1 <= surr2
    loss_pi = -np.minimum(surr1, surr2).mean()

    v, val_cache = nets.value.mlp.forward_cached(obs)
    v = v[:, 0]
    verr = v - ret
    loss_v = float((verr * verr).mean())
    entropy = gaussian_entropy(log_std)
    total = float(loss_pi) + value_coef * loss_v - entropy_coef * entropy

    # Backward pass.
    dtype = nets.policy.log_std.dtype
    inside = (ratio > 1.0 - clip_eps) & (ratio < 1.0 + clip_eps)
    dratio = np.where(use_unclipped, 1.0, inside.astype(dtype)) * adv * (-1.0 / B)
    dlogp = (dratio * ratio).astype(dtype)
    dmean = dlogp[:, None] * zscore / std
    dlog_std = (dlogp[:, None] * (zscore * zscore - 1.0)).sum(axis=0).astype(dtype)
    dlog_std -= np.asarray(entropy_coef, dtype=dtype)  # d(-coef * entropy)/d(log_std) = -coef

    dinp, pol_raw = nets.policy.mlp.backward(pol_cache, dmean)
    sd, gd = nets.dims.state_dim, nets.dims.subgoal_dim
    dg = dinp[:, sd : sd + gd]
    dz = dinp[:, sd + gd :]

    grads = nets.policy.mlp.named_grads("policy", pol_raw)
    grads["policy/log_std"] = dlog_std
    grads.update(nets.encoder.backward(enc_cache, dg))

    pass_mask = (np.abs(z_pre) < CLAMP_BOUND).astype(dtype)
    ddelta = alpha * dz * pass_mask * has[:, None]
    _, tta_raw = nets.tta.mlp.backward(tta_cache, ddelta)
    grads.update(nets.tta.mlp.named_grads("tta", tta_raw))

    dv = ((value_coef * 2.0 / B) * verr).astype(dtype)
    _, val_raw = nets.value.mlp.backward(val_cache, dv[:, None])
    grads.update(nets.value.mlp.named_grads("value", val_raw))

    stats = {
        "loss_pi": float(loss_pi),
        "loss_v": loss_v,
        "entropy": entropy,
        "total": total,
        "clip_frac": float(np.mean(~use_unclipped)),
        "approx_kl": float(np.mean(logp_old - logp_new)),
    }
    return stats, grads


def ppo_update(
    buffer: RolloutBuffer,
    nets: NetSet,
    cfg: PpoConfig,
    iteration: int,
    adam: Adam,
    shuffle_rng: np.random.Generator,
    alpha: float,
) -> dict[str, float]:
    """Run the epoch/minibatch update sweep for one iteration's buffer."""
    flat = buffer.flat()
    M = flat["logp"].shape[0]
    mb_size = M // cfg.minibatches
    lr = lr_schedule(cfg.lr0, iteration, cfg.total_iterations)
    params = nets.named_params()

    agg: dict[str, float] = {}
    n_updates = 0
    for _ in range(cfg.epochs):
        perm = shuffle_rng.permutation(M)
        for k in range(cfg.minibatches):
            idx = perm[k * mb_size : (k + 1) * mb_size]
            batch = {name: arr[idx] for name, arr in flat.items()}
            stats, grads = ppo_loss_and_grads(
                nets, batch, cfg.clip, cfg.entropy_coef, cfg.value_coef, alpha
            )
            clip_global_norm(grads, cfg.max_grad_norm)
            adam.step(params, grads, lr)
            for key, val in stats.items():
                agg[key] = agg.get(key, 0.0) + val
            n_updates += 1
    out = {key: val / n_updates for key, val in agg.items()}
    out["lr"] = lr
    if not all(math.isfinite(v) for v in out.values()):
        raise FloatingPointError(f"non-finite loss statistics at iteration {iteration}: {out}")
    return out


class Trainer:
    """Iteration loop: collect under randomization, grow the curriculum,
    update, log, checkpoint."""

    def __init__(
        self,
        cfg: PpoConfig,
        settings: TrainSettings,
        params: PhysicalParams = simcore.DEFAULT_PARAMS,
        dims: NetDims = NetDims(),
    ):
        cfg.validate()
        self.cfg = cfg
        self.settings = settings
        self.params = params
        self.dims = dims

        ss = np.random.SeedSequence(settings.seed)
        children = ss.spawn(cfg.n_envs + 3)
        init_rng = np.random.Generator(np.random.PCG64(children[cfg.n_envs]))
        self.action_rng = np.random.Generator(np.random.PCG64(children[cfg.n_envs + 1]))
        self.shuffle_rng = np.random.Generator(np.random.PCG64(children[cfg.n_envs + 2]))

        self.nets = NetSet.initialize(init_rng, dims)
        self.adam = Adam(self.nets.named_params())

        task_ids = settings.task_ids
        self.envs: list[EpisodeRunner] = []
        self.env_rngs: list[np.random.Generator] = []
        for i in range(cfg.n_envs):
            task = task_ids[i % len(task_ids)]
            self.envs.append(
                EpisodeRunner(task, params=params, latent_dim=dims.latent_dim, alpha=settings.alpha)
            )
            self.env_rngs.append(np.random.Generator(np.random.PCG64(children[i])))
        self.env_tasks = np.array([env.task_id for env in self.envs], dtype=np.int64)

        self.curricula: dict[int, Curriculum] = {}
        for task in task_ids:
            if settings.fixed_distance is not None:
                self.curricula[task] = Curriculum(distance=settings.fixed_distance)
            else:
                self.curricula[task] = Curriculum.initial(task)

        for i, env in enumerate(self.envs):
            env.reset(self.curricula[env.task_id], self._draw_mismatch(i), self.env_rngs[i])

        self.total_steps = 0

    def _draw_mismatch(self, env_index: int) -> MismatchConfig:
        return sample_dr(self.settings.dr, self.env_rngs[env_index])

    def collect_rollout(self) -> tuple[RolloutBuffer, dict]:
        """Step every env rollout_steps_total/n_envs times, batching all
        network passes across envs; episodes ending mid-rollout reset
        immediately with a fresh randomization draw and a zeroed latent."""
        cfg, nets = self.cfg, self.nets
        n = cfg.n_envs
        T = cfg.rollout_steps_total // n
        buf = RolloutBuffer.allocate(T, n, self.dims)
        log_std = nets.policy.log_std
        std = np.exp(log_std)

        ended: dict[int, int] = {t: 0 for t in self.settings.task_ids}
        succeeded: dict[int, int] = {t: 0 for t in self.settings.task_ids}
        ep_lengths: list[int] = []
        trans_new = np.zeros((n, self.dims.tta_in), dtype=np.float32)
        done_row = np.zeros(n, dtype=bool)

        for t in range(T):
            for i, env in enumerate(self.envs):
                buf.obs[t, i] = env.observe()
                buf.x[t, i] = env.state_vector()
                buf.z[t, i] = env.z
                buf.z_base[t, i] = env.replay_z_base
                buf.trans[t, i] = env.replay_trans
                buf.has_trans[t, i] = 1.0 if env.replay_has else 0.0
            buf.task[t] = self.env_tasks

            g = nets.encoder.encode(self.env_tasks, buf.obs[t])
            inp = np.concatenate([buf.x[t], g, buf.z[t]], axis=1)
            mean = nets.policy.forward(inp)
            noise = self.action_rng.standard_normal(mean.shape, dtype=np.float32)
            u_raw = mean + std * noise
            u_cmd = np.clip(u_raw, -1.0, 1.0)
            buf.action_raw[t] = u_raw
            buf.logp[t] = gaussian_logp(u_raw, mean, log_std)
            buf.value[t] = nets.value.forward(buf.obs[t])

            if not np.isfinite(mean).all():
                raise FloatingPointError(f"non-finite policy output at step {t}")

            for i, env in enumerate(self.envs):
                res = env.step(u_cmd[i])
                buf.reward[t, i] = res.reward
                buf.done[t, i] = 1.0 if res.done else 0.0
                done_row[i] = res.done
                trans_new[i, : self.dims.state_dim] = res.x_prev
                trans_new[i, self.dims.state_dim : self.dims.state_dim + self.dims.action_dim] = res.u_cmd
                trans_new[i, self.dims.state_dim + self.dims.action_dim :] = res.x_next
                if res.done:
                    task = env.task_id
                    ended[task] += 1
                    if res.outcome is Outcome.SUCCESS:
                        succeeded[task] += 1
                    ep_lengths.append(env.ep.step)

            deltas = nets.tta.forward(trans_new)
            for i, env in enumerate(self.envs):
                if done_row[i]:
                    env.reset(self.curricula[env.task_id], self._draw_mismatch(i), self.env_rngs[i])
                else:
                    env.advance_latent(deltas[i], trans_new[i])

        obs_tail = np.stack([env.observe() for env in self.envs])
        bootstrap = nets.value.forward(obs_tail).astype(np.float64)
        adv, ret = compute_gae(
            buf.reward, buf.value, buf.done, bootstrap, cfg.gamma, cfg.gae_lambda
        )
        buf.advantages = normalize_advantages(adv)
        buf.returns = ret

        self.total_steps += T * n
        total_ended = sum(ended.values())
        total_succ = sum(succeeded.values())
        stats = {
            "ended": ended,
            "succeeded": succeeded,
            "sr": total_succ / total_ended if total_ended else 0.0,
            "mean_ep_len": float(np.mean(ep_lengths)) if ep_lengths else 0.0,
            "mean_reward": float(buf.reward.mean()),
        }
        return buf, stats

    def _update_curricula(self, stats: dict) -> None:
        if self.settings.fixed_distance is not None:
            return
        for task in self.settings.task_ids:
            n_ended = stats["ended"][task]
            sr = stats["succeeded"][task] / n_ended if n_ended else 0.0
            self.curricula[task] = tasks.curriculum_update(self.curricula[task], sr)

    def _checkpoint_meta(self, iteration: int) -> dict:
        return {
            "config_digest": self.settings.config_digest,
            "iteration": iteration,
            "seed": self.settings.seed,
            "steps": self.total_steps,
            "alpha": self.settings.alpha,
        }

    def run(self, log_path: str | Path | None = None) -> Path | None:
        """Full training loop; returns the final checkpoint path (if any)."""
        out_dir = Path(self.settings.out_dir) if self.settings.out_dir else None
        if out_dir:
            out_dir.mkdir(parents=True, exist_ok=True)
        log_path = Path(log_path) if log_path else (out_dir / "train_log.csv" if out_dir else None)

        log_fh = None
        writer = None
        if log_path:
            log_fh = open(log_path, "w", newline="")
            log_fh.write(
                f"# config_digest={self.settings.config_digest} seed={self.settings.seed}\n"
            )
            writer = csv.writer(log_fh)
            writer.writerow(LOG_HEADER)

        final_path = None
        try:
            for it in range(self.cfg.total_iterations):
                buf, stats = self.collect_rollout()
                self._update_curricula(stats)
                losses = ppo_update(
                    buf, self.nets, self.cfg, it, self.adam, self.shuffle_rng, self.settings.alpha
                )
                if writer:
                    emas = [self.curricula[t].sr_ema for t in self.settings.task_ids]
                    dists = [self.curricula[t].distance for t in self.settings.task_ids]
                    writer.writerow(
                        [
                            it,
                            self.total_steps,
                            f"{stats['sr']:.6f}",
                            f"{float(np.mean(emas)):.6f}",
                            f"{float(np.mean(dists)):.6f}",
                            f"{stats['mean_ep_len']:.3f}",
                            f"{stats['mean_reward']:.6f}",
                            f"{losses['loss_pi']:.6f}",
                            f"{losses['loss_v']:.6f}",
                            f"{losses['entropy']:.6f}",
                            f"{losses['lr']:.8g}",
                        ]
                    )
                    log_fh.flush()
                if out_dir and (
                    (it + 1) % self.settings.checkpoint_every == 0
                    or it == self.cfg.total_iterations - 1
                ):
                    path = out_dir / f"checkpoint_{it + 1:05d}.abtt"
                    save_netset(path, self.nets, self._checkpoint_meta(it))
                    final_path = path
        finally:
            if log_fh:
                log_fh.close()
        if out_dir:
            final = out_dir / "checkpoint_final.abtt"
            save_netset(final, self.nets, self._checkpoint_meta(self.cfg.total_iterations - 1))
            final_path = final
        return final_path
