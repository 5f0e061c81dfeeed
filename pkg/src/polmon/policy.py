"""Demonstration-conditioned policies and their behavior-cloning trainer.

All variants share an MLP frame encoder and a two-headed actor (position,
grip control) and differ in how they turn demonstrations into a task
embedding:

  naive_dc  mean over demos of concat(first frame, last frame) features
  dct       attention block over all demo frames, then per-frame
            rollout-to-memory attention
  scan      recurrent summary of the rollout queries each demo separately,
            contexts averaged over demos

The actor's position head works in units of the maximum step; ``act``
rescales to world units.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .ckpt import load_blocks, save_blocks
from .envsuite import (MAX_STEP, STEP_BUDGET, DeviationAudit, ERROR, NORMAL,
                       EnvironmentSpec, Frame, Rollout, initial_state,
                       is_success, observe, step)
from .layers import AttentionBlock, Linear, LstmCell, Mlp, MultiHeadAttention, load_into, model_blocks
from .optim import RmsPropState
from .seeding import rng_for

VARIANTS = ("naive_dc", "dct", "scan")


@dataclass(frozen=True)
class PolicyConfig:
    variant: str = "scan"
    obs_dim: int = 32
    hidden: int = 64
    feature: int = 64
    heads: int = 2
    actor_hidden: tuple[int, int] = (64, 32)

    @property
    def task_dim(self) -> int:
        return 2 * self.feature if self.variant == "naive_dc" else self.feature


class PolicyModel:
    def __init__(self, config: PolicyConfig, seed: int = 0):
        if config.variant not in VARIANTS:
            raise ValueError(f"unknown policy variant {config.variant!r}")
        self.config = config
        self.params: dict[str, T.Tensor] = {}
        rng = rng_for(seed, "policy-init", config.variant)
        c = config
        self.encoder = Mlp(self.params, rng, (c.obs_dim, c.hidden, c.feature), "enc")
        if c.variant == "dct":
            self.demo_block = AttentionBlock(self.params, rng, c.feature, c.heads, "temb.block")
            self.cross = MultiHeadAttention(self.params, rng, c.feature, c.heads, "temb.cross")
        elif c.variant == "scan":
            self.summarizer = LstmCell(self.params, rng, c.feature, c.feature, "temb.lstm")
            self.query = Linear(self.params, rng, c.feature, c.feature, "temb.q")
        trunk_in = c.feature + c.task_dim
        self.trunk = Mlp(self.params, rng, (trunk_in,) + tuple(c.actor_hidden), "actor.trunk")
        self.head_pos = Linear(self.params, rng, c.actor_hidden[-1], 2, "actor.pos")
        self.head_ctl = Linear(self.params, rng, c.actor_hidden[-1], 1, "actor.ctl")

    # -- forward pieces

    def encode(self, obs: T.Tensor, tape=None) -> T.Tensor:
        """(T, obs_dim) -> (T, feature); also accepts a single 1-D frame."""
        return self.encoder(obs, tape)

    def task_embed_seq(self, demo_feats: list[T.Tensor], hist_feats: T.Tensor, tape=None) -> T.Tensor:
        """Per-frame task embedding aligned with the history rows."""
        if not demo_feats:
            raise ValueError("at least one demonstration is required")
        n_hist = hist_feats.data.shape[0]
        v = self.config.variant
        if v == "naive_dc":
            ends = [T.concat([T.row(df, 0, tape), T.row(df, df.data.shape[0] - 1, tape)], tape)
                    for df in demo_feats]
            fz = T.scale(_sum_tensors(ends, tape), 1.0 / len(ends), tape)
            return T.tile_rows(fz, n_hist, tape)
        if v == "dct":
            memory = self.demo_block(T.concat_rows(demo_feats, tape), tape=tape)
            return self.cross(hist_feats, memory, memory, tape=tape)
        summary = self.summarizer.run(hist_feats, tape)
        q = self.query(summary, tape)
        ctxs = [T.attention(q, df, df, tape=tape) for df in demo_feats]
        return T.scale(_sum_tensors(ctxs, tape), 1.0 / len(ctxs), tape)

    def actor(self, hist_feats: T.Tensor, task_seq: T.Tensor, tape=None) -> T.Tensor:
        """Returns (T, 3): position deltas in max-step units, grip in (0, 1)."""
        x = T.tanh(self.trunk(T.concat([hist_feats, task_seq], tape), tape), tape)
        pos = self.head_pos(x, tape)
        ctl = T.sigmoid(self.head_ctl(x, tape), tape)
        return T.concat([pos, ctl], tape)

    def forward_actions(self, obs_mat: T.Tensor, demo_feats: list[T.Tensor], tape=None) -> T.Tensor:
        hist = self.encode(obs_mat, tape)
        task = self.task_embed_seq(demo_feats, hist, tape)
        return self.actor(hist, task, tape)

    # -- persistence

    def save(self, path) -> None:
        save_blocks(path, model_blocks(self.params))
        Path(str(path) + ".json").write_text(
            json.dumps(asdict(self.config), sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "PolicyModel":
        cfg = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
        cfg["actor_hidden"] = tuple(cfg["actor_hidden"])
        model = cls(PolicyConfig(**cfg))
        load_into(model.params, load_blocks(path))
        return model


def _sum_tensors(ts, tape):
    acc = ts[0]
    for t in ts[1:]:
        acc = T.add(acc, t, tape)
    return acc


def encode_rollout_obs(rollout: Rollout) -> np.ndarray:
    return np.stack([f.obs for f in rollout.frames], axis=0)


def bc_targets(rollout: Rollout) -> np.ndarray:
    a = np.stack([f.action for f in rollout.frames], axis=0)
    return np.column_stack([a[:, :2] / MAX_STEP, a[:, 2]])


# ---------------------------------------------------------------------------
# training


@dataclass
class PolicyTrainConfig:
    epochs: int = 60
    demos_per_iter: int = 5
    rollouts_per_iter: int = 10
    lr: float = 1e-4
    l2: float = 1e-2
    seed: int = 0


def train_policy(variant: str, demos_by_env: dict[int, list[Rollout]],
                 succ_by_env: dict[int, list[Rollout]],
                 train_cfg: PolicyTrainConfig,
                 policy_cfg: PolicyConfig | None = None,
                 log: list | None = None) -> PolicyModel:
    """Behavior cloning on successful agent rollouts, conditioned on demos."""
    if not succ_by_env or not demos_by_env:
        raise ValueError("training needs demonstrations and successful rollouts")
    if policy_cfg is None:
        policy_cfg = PolicyConfig(variant=variant)
    else:
        policy_cfg = PolicyConfig(**{**asdict(policy_cfg), "variant": variant})
    model = PolicyModel(policy_cfg, seed=train_cfg.seed)
    opt = RmsPropState(lr=train_cfg.lr, l2=train_cfg.l2)
    env_ids = sorted(succ_by_env)
    rng = rng_for(train_cfg.seed, "policy-train", variant)
    for epoch in range(train_cfg.epochs):
        losses = []
        for env_id in env_ids:
            demos = _sample(demos_by_env[env_id], train_cfg.demos_per_iter, rng)
            rollouts = _sample(succ_by_env[env_id], train_cfg.rollouts_per_iter, rng)
            tape = T.Tape()
            demo_feats = [model.encode(T.constant(encode_rollout_obs(d)), tape) for d in demos]
            per_rollout = []
            for r in rollouts:
                pred = model.forward_actions(T.constant(encode_rollout_obs(r)), demo_feats, tape)
                per_rollout.append(T.squared_error(pred, T.constant(bc_targets(r)), tape))
            loss = T.scale(_sum_tensors(per_rollout, tape), 1.0 / len(per_rollout), tape)
            T.backward(tape, loss)
            opt.step(model.params)
            opt.zero_grad(model.params)
            losses.append(float(loss.data))
        if log is not None:
            log.append(float(np.mean(losses)))
    return model


def _sample(pool, k, rng):
    if not pool:
        raise ValueError("empty rollout pool")
    idx = rng.choice(len(pool), size=min(k, len(pool)), replace=len(pool) < k)
    return [pool[int(i)] for i in idx]


# ---------------------------------------------------------------------------
# closed-loop execution


class PolicyRunner:
    """Incremental per-frame execution of a frozen policy."""

    def __init__(self, model: PolicyModel, demos: list[Rollout]):
        self.model = model
        self.demo_feats = [model.encode(T.constant(encode_rollout_obs(d))) for d in demos]
        if model.config.variant == "naive_dc":
            ends = [T.concat([T.row(df, 0), T.row(df, df.data.shape[0] - 1)])
                    for df in self.demo_feats]
            self._fz = T.scale(_sum_tensors(ends, None), 1.0 / len(ends))
        elif model.config.variant == "dct":
            self._memory = model.demo_block(T.concat_rows(self.demo_feats))
        self.reset()

    def reset(self) -> None:
        if self.model.config.variant == "scan":
            self._state = self.model.summarizer.initial_state()

    def features(self, obs: np.ndarray) -> tuple[T.Tensor, T.Tensor]:
        """One frame's history feature and task embedding (advances state)."""
        m = self.model
        feat = m.encode(T.constant(obs))
        v = m.config.variant
        if v == "naive_dc":
            fz = self._fz
        elif v == "dct":
            fz = m.cross(feat, self._memory, self._memory)
        else:
            h, c = m.summarizer.step(feat, self._state)
            self._state = (h, c)
            q = m.query(h)
            fz = T.scale(_sum_tensors([T.attention(q, df, df) for df in self.demo_feats], None),
                         1.0 / len(self.demo_feats))
        return feat, fz

    def act_from(self, feat: T.Tensor, fz: T.Tensor) -> np.ndarray:
        a = self.model.actor(feat, fz).data
        return np.array([a[0] * MAX_STEP, a[1] * MAX_STEP, a[2]])

    def act(self, obs: np.ndarray) -> np.ndarray:
        feat, fz = self.features(obs)
        return self.act_from(feat, fz)


def rollout_policy(model: PolicyModel, spec: EnvironmentSpec, demos: list[Rollout],
                   rng: np.random.Generator, budget: int = STEP_BUDGET) -> Rollout:
    """Execute to the success predicate or the step budget; frame labels come
    from the simulator's deviation audit (failures only)."""
    runner = PolicyRunner(model, demos)
    state = initial_state(spec, rng)
    audit = DeviationAudit(spec)
    frames: list[Frame] = []
    while state.steps < budget:
        obs = observe(spec, state, "agent", rng)
        action = runner.act(obs)
        frames.append(Frame(obs=obs, action=action))
        before = state
        state = step(spec, state, action)
        audit.observe_step(before, action, state)
        if is_success(spec, state):
            break
    if is_success(spec, state):
        outcome, onset = "success", None
    else:
        outcome, onset = "failure", audit.onset_for_failure()
    for i, f in enumerate(frames):
        f.label = ERROR if (onset is not None and i >= onset) else NORMAL
    return Rollout(frames=frames, outcome=outcome, onset=onset,
                   env_id=spec.env_id, producer="policy")
