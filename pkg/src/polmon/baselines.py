"""Comparison detectors, each with its own frame encoder (policy-independent).

  svdded     one-class: distance between frame embedding and the mean of
             demonstration-frame embeddings; trained on successes only
  taskembed  single-frame classifier conditioned on first/last demo frames
  lstmed     recurrent classifier over the rollout alone (no demos)
  dcted      causal self-attention over the rollout plus attention into a
             demo memory

All probability baselines train with frame-level BCE; svdded minimizes the
squared center distance. Scores: distance for svdded (higher = worse),
probability otherwise.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .ckpt import load_blocks, save_blocks
from .envsuite import Rollout
from .layers import AttentionBlock, Linear, LstmCell, Mlp, MultiHeadAttention, load_into, model_blocks
from .optim import RmsPropState
from .policy import encode_rollout_obs
from .probe import CLS_CLIP
from .seeding import rng_for

BASELINE_TAGS = ("svdded", "taskembed", "lstmed", "dcted")


@dataclass(frozen=True)
class BaselineConfig:
    tag: str = "lstmed"
    obs_dim: int = 32
    hidden: int = 64
    feature: int = 64
    heads: int = 2
    head_hidden: int = 32


class BaselineModel:
    """Encoder plus a tag-specific scoring head."""

    def __init__(self, config: BaselineConfig, seed: int = 0):
        if config.tag not in BASELINE_TAGS:
            raise ValueError(f"unknown baseline {config.tag!r}")
        self.config = config
        self.params: dict[str, T.Tensor] = {}
        rng = rng_for(seed, "baseline-init", config.tag)
        c = config
        self.encoder = Mlp(self.params, rng, (c.obs_dim, c.hidden, c.feature), "enc")
        if c.tag == "taskembed":
            self.head = Mlp(self.params, rng, (3 * c.feature, c.head_hidden, 1), "head")
        elif c.tag == "lstmed":
            self.cell = LstmCell(self.params, rng, c.feature, c.feature, "rnn")
            self.head = Linear(self.params, rng, c.feature, 1, "head")
        elif c.tag == "dcted":
            self.demo_block = AttentionBlock(self.params, rng, c.feature, c.heads, "demo")
            self.self_attn = MultiHeadAttention(self.params, rng, c.feature, c.heads, "self")
            self.cross = MultiHeadAttention(self.params, rng, c.feature, c.heads, "cross")
            self.head = Linear(self.params, rng, c.feature, 1, "head")

    @property
    def polarity(self) -> str:
        return "distance" if self.config.tag == "svdded" else "probability"

    # -- scoring (matrix in, per-frame column out)

    def demo_center(self, demo_feats: list[T.Tensor], tape=None) -> T.Tensor:
        return T.mean_rows(T.concat_rows(demo_feats, tape), tape)

    def score_frames(self, obs_mat: T.Tensor, demo_feats: list[T.Tensor] | None, tape=None) -> T.Tensor:
        """(T, obs) -> (T, 1) score column; causal for the temporal heads."""
        c = self.config
        feats = self.encoder(obs_mat, tape)
        n = feats.data.shape[0]
        if c.tag == "svdded":
            center = self.demo_center(demo_feats, tape)
            d = T.sub(feats, T.tile_rows(center, n, tape), tape)
            return T.sqrt(T.sum_cols(T.square(d, tape), tape), tape)
        if c.tag == "taskembed":
            ends = [T.concat([T.row(df, 0, tape), T.row(df, df.data.shape[0] - 1, tape)], tape)
                    for df in demo_feats]
            emb = T.scale(_sum(ends, tape), 1.0 / len(ends), tape)
            x = T.concat([feats, T.tile_rows(emb, n, tape)], tape)
            return T.sigmoid(self.head(x, tape), tape)
        if c.tag == "lstmed":
            return T.sigmoid(self.head(self.cell.run(feats, tape), tape), tape)
        memory = self.demo_block(T.concat_rows(demo_feats, tape), tape=tape)
        x = T.add(feats, self.self_attn(feats, feats, feats, causal=True, tape=tape), tape)
        x = T.instance_norm(x, tape=tape)
        x = T.instance_norm(T.add(x, self.cross(x, memory, memory, tape=tape), tape), tape=tape)
        return T.sigmoid(self.head(x, tape), tape)

    def encode_demos(self, demos: list[Rollout], tape=None) -> list[T.Tensor]:
        return [self.encoder(T.constant(encode_rollout_obs(d)), tape) for d in demos]

    def score_rollout(self, rollout: Rollout, demos: list[Rollout] | None) -> np.ndarray:
        if not rollout.frames:
            raise ValueError("empty rollout prefix")
        needs_demos = self.config.tag != "lstmed"
        if needs_demos and not demos:
            raise ValueError(f"{self.config.tag} needs demonstrations")
        demo_feats = self.encode_demos(demos) if needs_demos else None
        col = self.score_frames(T.constant(encode_rollout_obs(rollout)), demo_feats)
        return col.data.ravel().copy()

    # -- persistence

    def save(self, path) -> None:
        save_blocks(path, model_blocks(self.params))
        Path(str(path) + ".json").write_text(
            json.dumps(asdict(self.config), sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "BaselineModel":
        cfg = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
        model = cls(BaselineConfig(**cfg))
        load_into(model.params, load_blocks(path))
        return model


def _sum(ts, tape):
    acc = ts[0]
    for t in ts[1:]:
        acc = T.add(acc, t, tape)
    return acc


# ---------------------------------------------------------------------------
# training


@dataclass
class BaselineTrainConfig:
    epochs: int = 30
    demos_per_iter: int = 5
    succ_per_iter: int = 10
    fail_per_iter: int = 10
    svdd_succ_per_iter: int = 20
    lr: float = 1e-4
    l2: float = 1e-2
    seed: int = 0


def train_baseline(tag: str, demos_by_env: dict[int, list[Rollout]],
                   succ_by_env: dict[int, list[Rollout]], fail_by_env: dict[int, list[Rollout]],
                   train_cfg: BaselineTrainConfig, model_cfg: BaselineConfig | None = None,
                   augment_fn=None, log: list | None = None) -> BaselineModel:
    """Shared RMSProp loop. svdded never sees failed rollouts."""
    if model_cfg is None:
        model_cfg = BaselineConfig(tag=tag)
    else:
        model_cfg = BaselineConfig(**{**asdict(model_cfg), "tag": tag})
    model = BaselineModel(model_cfg, seed=train_cfg.seed)
    opt = RmsPropState(lr=train_cfg.lr, l2=train_cfg.l2)
    rng = rng_for(train_cfg.seed, "baseline-train", tag)
    env_ids = sorted(succ_by_env)
    for _epoch in range(train_cfg.epochs):
        losses = []
        for env_id in env_ids:
            demos = _pick(demos_by_env[env_id], train_cfg.demos_per_iter, rng)
            if tag == "svdded":
                batch = _pick(succ_by_env[env_id], train_cfg.svdd_succ_per_iter, rng)
            else:
                batch = (_pick(succ_by_env[env_id], train_cfg.succ_per_iter, rng)
                         + _pick(fail_by_env[env_id], train_cfg.fail_per_iter, rng))
            if augment_fn is not None:
                batch = [augment_fn(r, rng) if r.producer != "expert" else r for r in batch]
            tape = T.Tape()
            demo_feats = model.encode_demos(demos, tape) if tag != "lstmed" else None
            terms = []
            for r in batch:
                col = model.score_frames(T.constant(encode_rollout_obs(r)), demo_feats, tape)
                if tag == "svdded":
                    terms.append(T.mean_all(T.square(col, tape), tape))
                else:
                    y = T.constant(r.labels.astype(np.float64).reshape(-1, 1))
                    terms.append(T.bce(T.clip(col, CLS_CLIP, 1 - CLS_CLIP, tape), y, tape))
            loss = T.scale(_sum(terms, tape), 1.0 / len(terms), tape)
            T.backward(tape, loss)
            opt.step(model.params)
            opt.zero_grad(model.params)
            losses.append(float(loss.data))
        if log is not None:
            log.append(float(np.mean(losses)))
    return model


def _pick(pool, k, rng):
    if not pool:
        raise ValueError("empty rollout pool")
    idx = rng.choice(len(pool), size=min(k, len(pool)), replace=len(pool) < k)
    return [pool[int(i)] for i in idx]


# ---------------------------------------------------------------------------
# spec-level single-frame entry points


def svdd_score(model: BaselineModel, frame_obs: np.ndarray, demos: list[Rollout]) -> float:
    if not demos:
        raise ValueError("svdd_score needs demonstrations")
    center = model.demo_center(model.encode_demos(demos))
    f = model.encoder(T.constant(frame_obs))
    return float(np.linalg.norm(f.data - center.data))


def taskembed_score(model: BaselineModel, frame_obs: np.ndarray, demos: list[Rollout]) -> float:
    if not demos:
        raise ValueError("taskembed_score needs demonstrations")
    obs = T.constant(frame_obs.reshape(1, -1))
    col = model.score_frames(obs, model.encode_demos(demos))
    return float(col.data.ravel()[0])
