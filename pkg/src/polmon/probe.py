"""Pattern-based error detector operating on frozen policy features.

Per frame, the history feature is normalized to the unit sphere, a learned
gate scores each cell, and the sign/gate Hadamard product is instance
normalized into a sparse pattern. A recurrent cell turns the pattern
sequence into a causal flow; task embeddings are transformed (IN, linear,
tanh) and fused with the flow to produce per-frame error probabilities and
a fused embedding kept for the temporal triplet objective and for export.

Training combines three objectives: frame-level binary cross-entropy, an
L1 sparsity term on patterns, and a triplet loss over fused embeddings of
failed rollouts whose margin shrinks or grows with the temporal distances
between anchor, positive, and negative frames.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .ckpt import load_blocks, save_blocks
from .envsuite import ERROR, Rollout
from .layers import Linear, LstmCell, load_into, model_blocks
from .optim import RmsPropState
from .policy import PolicyModel, encode_rollout_obs
from .seeding import rng_for

CLS_CLIP = 1e-7


@dataclass(frozen=True)
class LossConfig:
    lam_pat: float = 0.1
    lam_tem: float = 0.5
    lam_cls: float = 1.0
    margin: float = 1.0
    alpha: float = 0.1
    clip_frames: int = 10
    triplets: int = 32

    def __post_init__(self):
        if min(self.lam_pat, self.lam_tem, self.lam_cls) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.clip_frames < 1:
            raise ValueError("temporal clip bound must be >= 1")


@dataclass(frozen=True)
class ProbeConfig:
    feature: int = 64
    task_dim: int = 64
    fused_dim: int = 32
    extractor: str = "gated_sign"   # gated_sign | naive_fc (ablation)


class ProbeModel:
    def __init__(self, config: ProbeConfig, seed: int = 0):
        if config.extractor not in ("gated_sign", "naive_fc"):
            raise ValueError(f"unknown extractor {config.extractor!r}")
        self.config = config
        self.params: dict[str, T.Tensor] = {}
        rng = rng_for(seed, "probe-init", config.extractor)
        f = config.feature
        self.gate = Linear(self.params, rng, f, f, "gate")
        self.flow_cell = LstmCell(self.params, rng, f, f, "flow")
        self.task_fc = Linear(self.params, rng, config.task_dim, f, "task")
        self.fuse_fc = Linear(self.params, rng, 2 * f, config.fused_dim, "fuse")
        self.cls_fc = Linear(self.params, rng, config.fused_dim, 1, "cls")

    # -- forward pieces (each works on (T, d) matrices or single 1-D frames)

    def pattern_extract(self, feats: T.Tensor, tape=None) -> T.Tensor:
        if self.config.extractor == "naive_fc":
            return T.instance_norm(self.gate(feats, tape), tape=tape)
        u = T.l2_normalize(feats, tape=tape)
        s = T.sigmoid(self.gate(u, tape), tape)
        return T.instance_norm(T.mul(T.sign(u, tape), s, tape), tape=tape)

    def flow(self, patterns: T.Tensor, tape=None) -> T.Tensor:
        return self.flow_cell.run(patterns, tape)

    def transform_task(self, task: T.Tensor, tape=None) -> T.Tensor:
        return T.tanh(self.task_fc(T.instance_norm(task, tape=tape), tape), tape)

    def fuse_predict(self, flow_states: T.Tensor, task_tr: T.Tensor, tape=None):
        fused = T.tanh(self.fuse_fc(T.concat([flow_states, task_tr], tape), tape), tape)
        yhat = T.sigmoid(self.cls_fc(fused, tape), tape)
        return fused, yhat

    def forward(self, feats: T.Tensor, task: T.Tensor, tape=None):
        """feats (T, feature), task (T, task_dim) -> (patterns, fused, yhat)."""
        patterns = self.pattern_extract(feats, tape)
        flow_states = self.flow(patterns, tape)
        task_tr = self.transform_task(task, tape)
        fused, yhat = self.fuse_predict(flow_states, task_tr, tape)
        return patterns, fused, yhat

    # -- persistence

    def save(self, path) -> None:
        save_blocks(path, model_blocks(self.params))
        Path(str(path) + ".json").write_text(
            json.dumps(asdict(self.config), sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ProbeModel":
        cfg = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
        model = cls(ProbeConfig(**cfg))
        load_into(model.params, load_blocks(path))
        return model


# ---------------------------------------------------------------------------
# objectives


def normalize_temporal_distance(dt, clip_frames: int) -> np.ndarray:
    """Clip |frame index difference| to [0, C], then divide by C."""
    return np.clip(np.abs(np.asarray(dt, dtype=np.float64)), 0.0, clip_frames) / clip_frames


def temporal_margin(margin: float, alpha: float, d_ap, d_an) -> np.ndarray:
    """m_t = m * (1 - alpha * (d_ap - d_an)) on normalized distances."""
    return margin * (1.0 - alpha * (np.asarray(d_ap) - np.asarray(d_an)))


def loss_cls(yhat: T.Tensor, labels: np.ndarray, tape=None) -> T.Tensor:
    y = T.constant(np.asarray(labels, dtype=np.float64).reshape(yhat.data.shape))
    return T.bce(T.clip(yhat, CLS_CLIP, 1.0 - CLS_CLIP, tape), y, tape)


def loss_pat(patterns: T.Tensor, tape=None) -> T.Tensor:
    return T.l1_mean(patterns, tape)


def sample_triplets(labels: np.ndarray, n: int, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray] | None:
    """Within-rollout triplets: anchor any frame, positive same label,
    negative the opposite label. None when the rollout has one class only."""
    labels = np.asarray(labels)
    pos_idx = np.flatnonzero(labels == ERROR)
    neg_idx = np.flatnonzero(labels != ERROR)
    if len(pos_idx) == 0 or len(neg_idx) == 0:
        return None
    anchors = rng.integers(0, len(labels), size=n)
    same = np.where(labels[anchors] == ERROR, 0, 1)
    positives = np.empty(n, dtype=np.int64)
    negatives = np.empty(n, dtype=np.int64)
    for j in range(n):
        own = pos_idx if same[j] == 0 else neg_idx
        other = neg_idx if same[j] == 0 else pos_idx
        cand = own[own != anchors[j]]
        positives[j] = (cand[rng.integers(0, len(cand))] if len(cand)
                        else anchors[j])
        negatives[j] = other[rng.integers(0, len(other))]
    return anchors, positives, negatives


def loss_tem(fused: T.Tensor, labels: np.ndarray, cfg: LossConfig,
             rng, tape=None) -> T.Tensor | None:
    """Temporal-aware triplet loss over fused embeddings of one failed rollout."""
    trip = sample_triplets(labels, cfg.triplets, rng)
    if trip is None:
        return None
    a_idx, p_idx, n_idx = trip
    a = T.take_rows(fused, a_idx, tape)
    p = T.take_rows(fused, p_idx, tape)
    n = T.take_rows(fused, n_idx, tape)
    d_ap = T.row_l2_distance(a, p, tape)
    d_an = T.row_l2_distance(a, n, tape)
    m_t = temporal_margin(cfg.margin, cfg.alpha,
                          normalize_temporal_distance(a_idx - p_idx, cfg.clip_frames),
                          normalize_temporal_distance(a_idx - n_idx, cfg.clip_frames))
    hinge = T.relu(T.add(T.sub(d_ap, d_an, tape), T.constant(m_t), tape), tape)
    return T.mean_all(hinge, tape)


def total_loss(l_pat: T.Tensor, l_tem: T.Tensor | None, l_cls: T.Tensor,
               cfg: LossConfig, tape=None) -> T.Tensor:
    out = T.scale(l_cls, cfg.lam_cls, tape)
    out = T.add(out, T.scale(l_pat, cfg.lam_pat, tape), tape)
    if l_tem is not None:
        out = T.add(out, T.scale(l_tem, cfg.lam_tem, tape), tape)
    return out


# ---------------------------------------------------------------------------
# frozen-policy feature extraction


def policy_features(policy: PolicyModel, rollout: Rollout, demos: list[Rollout]):
    """Frozen forward through the policy: per-frame history features and
    task embeddings, returned as constants (no gradient path into the policy)."""
    obs = T.constant(encode_rollout_obs(rollout))
    demo_feats = [policy.encode(T.constant(encode_rollout_obs(d))) for d in demos]
    hist = policy.encode(obs)
    task = policy.task_embed_seq(demo_feats, hist)
    return T.constant(hist.data.copy()), T.constant(task.data.copy())


# ---------------------------------------------------------------------------
# training


@dataclass
class ProbeTrainConfig:
    epochs: int = 30
    demos_per_iter: int = 5
    succ_per_iter: int = 10
    fail_per_iter: int = 10
    lr: float = 1e-4
    l2: float = 1e-2
    seed: int = 0
    augment: bool = True


def train_probe(policy: PolicyModel, demos_by_env: dict[int, list[Rollout]],
                succ_by_env: dict[int, list[Rollout]], fail_by_env: dict[int, list[Rollout]],
                loss_cfg: LossConfig, train_cfg: ProbeTrainConfig,
                probe_cfg: ProbeConfig | None = None,
                augment_fn=None, log: list | None = None) -> ProbeModel:
    """Optimize the detector on labeled base-environment rollouts; the policy
    is only ever run forward, so its parameters cannot change."""
    if not fail_by_env:
        raise ValueError("temporal triplet objective needs failed rollouts")
    if probe_cfg is None:
        probe_cfg = ProbeConfig(feature=policy.config.feature, task_dim=policy.config.task_dim)
    model = ProbeModel(probe_cfg, seed=train_cfg.seed)
    opt = RmsPropState(lr=train_cfg.lr, l2=train_cfg.l2)
    rng = rng_for(train_cfg.seed, "probe-train")
    env_ids = sorted(succ_by_env)
    for epoch in range(train_cfg.epochs):
        epoch_log = []
        for env_id in env_ids:
            demos = _pick(demos_by_env[env_id], train_cfg.demos_per_iter, rng)
            batch = (_pick(succ_by_env[env_id], train_cfg.succ_per_iter, rng)
                     + _pick(fail_by_env[env_id], train_cfg.fail_per_iter, rng))
            if augment_fn is not None:
                batch = [augment_fn(r, rng) if r.producer != "expert" else r for r in batch]
            tape = T.Tape()
            pats, clss, tems = [], [], []
            for r in batch:
                hist, task = policy_features(policy, r, demos)
                patterns, fused, yhat = model.forward(hist, task, tape)
                pats.append(loss_pat(patterns, tape))
                clss.append(loss_cls(yhat, r.labels, tape))
                if r.outcome == "failure":
                    lt = loss_tem(fused, r.labels, loss_cfg, rng, tape)
                    if lt is not None:
                        tems.append(lt)
            l_pat = T.scale(_sum(pats, tape), 1.0 / len(pats), tape)
            l_cls = T.scale(_sum(clss, tape), 1.0 / len(clss), tape)
            l_tem = T.scale(_sum(tems, tape), 1.0 / len(tems), tape) if tems else None
            loss = total_loss(l_pat, l_tem, l_cls, loss_cfg, tape)
            T.backward(tape, loss)
            opt.step(model.params)
            opt.zero_grad(model.params)
            epoch_log.append([float(loss.data), float(l_pat.data),
                              float(l_tem.data) if l_tem is not None else 0.0,
                              float(l_cls.data)])
        if log is not None:
            log.append(np.mean(epoch_log, axis=0).tolist())
    return model


def _pick(pool, k, rng):
    if not pool:
        raise ValueError("empty rollout pool")
    idx = rng.choice(len(pool), size=min(k, len(pool)), replace=len(pool) < k)
    return [pool[int(i)] for i in idx]


def _sum(ts, tape):
    acc = ts[0]
    for t in ts[1:]:
        acc = T.add(acc, t, tape)
    return acc


# ---------------------------------------------------------------------------
# inference


def infer(model: ProbeModel, policy: PolicyModel, rollout: Rollout,
          demos: list[Rollout], return_embeddings: bool = False):
    """Per-frame error scores for a rollout (or prefix). Causal: the score at
    t depends only on frames <= t."""
    if not rollout.frames:
        raise ValueError("empty rollout prefix")
    hist, task = policy_features(policy, rollout, demos)
    _, fused, yhat = model.forward(hist, task)
    scores = yhat.data.ravel().copy()
    if return_embeddings:
        return scores, fused.data.copy()
    return scores


class ProbeRunner:
    """Incremental per-frame scoring that shares one frozen-policy forward
    with the acting path (for the online correction loop)."""

    def __init__(self, model: ProbeModel, policy: PolicyModel, demos: list[Rollout]):
        from .policy import PolicyRunner
        self.model = model
        self.policy_runner = PolicyRunner(policy, demos)
        self._flow_state = model.flow_cell.initial_state()

    def score_features(self, feat: T.Tensor, fz: T.Tensor) -> float:
        pattern = self.model.pattern_extract(feat)
        fh, fc = self.model.flow_cell.step(pattern, self._flow_state)
        self._flow_state = (fh, fc)
        task_tr = self.model.transform_task(fz)
        _, yhat = self.model.fuse_predict(fh, task_tr)
        return float(yhat.data.ravel()[0])

    def step(self, obs: np.ndarray) -> tuple[np.ndarray, float]:
        """Consume one observation; return (policy action, error score)."""
        feat, fz = self.policy_runner.features(obs)
        return self.policy_runner.act_from(feat, fz), self.score_features(feat, fz)

    def push(self, obs: np.ndarray) -> float:
        return self.step(obs)[1]
