"""Experiment phases: dataset generation, policy and detector training,
evaluation, timing analysis, ablations, the correction pilot, and report
collation. The CLI is a thin wrapper over these functions; tests call them
directly."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .augment import AugmentConfig, augment_rollout
from .baselines import BaselineConfig, BaselineModel, BaselineTrainConfig, train_baseline
from .config import ExperimentConfig
from .correction import (CorrectionConfig, EpisodeRecord, PolicyMonitor,
                         ScriptedMonitor, compare_sr, run_with_correction)
from .dataio import (config_hash, load_rollouts, read_manifest, save_rollouts,
                     write_manifest)
from .envsuite import (APPLICABLE, EnvironmentSpec, ExpertBudgetError, Rollout,
                       SuiteConfig, make_suite, run_expert, run_scripted_agent,
                       with_perturbation)
from .metrics import (ScoredRollout, accuracy_at, auprc, auroc, fpr_threshold,
                      oracle_auroc, sweep, timing_delay)
from .policy import (PolicyConfig, PolicyModel, PolicyTrainConfig, rollout_policy,
                     train_policy)
from .probe import (LossConfig, ProbeConfig, ProbeModel, ProbeRunner,
                    ProbeTrainConfig, infer, train_probe)
from .seeding import rng_for
from .svgplot import svg_roc, svg_traces

DETECTOR_TAGS = ("probe", "svdded", "taskembed", "lstmed", "dcted")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.10g}"
    return str(x)


def write_csv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


class PhaseOrderError(RuntimeError):
    """A command was invoked before its prerequisite phase produced outputs."""


def suite_config(cfg: ExperimentConfig) -> SuiteConfig:
    return SuiteConfig(task=cfg.task, n_base=cfg.n_base, n_novel=cfg.n_novel,
                       obs_dim=cfg.obs_dim, noise_scale=cfg.noise_scale,
                       env_variation=cfg.env_variation)


# ---------------------------------------------------------------------------
# phase 0: dataset generation


def _demo_quality(cfg: ExperimentConfig, i: int) -> str:
    if cfg.demo_quality == "optimal":
        return "optimal"
    if cfg.demo_quality == "suboptimal":
        return "suboptimal"
    return "optimal" if i % 5 < 3 else "suboptimal"  # mixed: 3 of 5 optimal


def _expert_with_retry(spec, seed_key, quality):
    for attempt in range(5):
        try:
            return run_expert(spec, rng_for(*seed_key, attempt), quality=quality)
        except ExpertBudgetError:
            continue
    raise ExpertBudgetError(f"env {spec.env_id}: no expert rollout within budget after retries")


def generate_datasets(cfg: ExperimentConfig, seed: int, out: Path, force: bool = False) -> dict:
    out = Path(out)
    manifest_path = out / "manifest.json"
    if manifest_path.exists() and not force:
        raise FileExistsError(f"{manifest_path} exists; pass force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    specs = make_suite(suite_config(cfg), seed)
    base = [s for s in specs if s.split == "base"]
    novel = [s for s in specs if s.split == "novel"]

    base_demos, base_succ, base_fail, novel_demos = [], [], [], []
    mixture: dict[str, int] = {}
    for spec in base:
        for i in range(cfg.demos_per_env):
            base_demos.append(_expert_with_retry(spec, (seed, spec.env_id, "demo", i),
                                                 _demo_quality(cfg, i)))
        for i in range(cfg.succ_per_env):
            base_succ.append(run_scripted_agent(spec, "none",
                                                rng_for(seed, spec.env_id, "succ", i)))
        kinds = [k for k in APPLICABLE[cfg.task] if k != "none"]
        for i in range(cfg.fail_per_env):
            kind = kinds[i % len(kinds)]  # uniform mixture over applicable interventions
            r = run_scripted_agent(spec, kind, rng_for(seed, spec.env_id, "fail", i))
            if r.outcome != "failure":
                raise RuntimeError(f"intervention {kind} produced a non-failure rollout")
            base_fail.append(r)
            mixture[kind] = mixture.get(kind, 0) + 1
    for spec in novel:
        for i in range(cfg.demos_per_env):
            novel_demos.append(_expert_with_retry(spec, (seed, spec.env_id, "demo", i),
                                                  _demo_quality(cfg, i)))

    save_rollouts(out / "base_demos.jsonl", base_demos)
    save_rollouts(out / "base_success.jsonl", base_succ)
    save_rollouts(out / "base_failure.jsonl", base_fail)
    save_rollouts(out / "novel_demos.jsonl", novel_demos)
    write_manifest(manifest_path, cfg.to_dict(), extra={
        "suite_seed": seed, "version": __version__,
        "failure_mixture": {k: mixture[k] for k in sorted(mixture)},
        "counts": {"base_demos": len(base_demos), "base_success": len(base_succ),
                   "base_failure": len(base_fail), "novel_demos": len(novel_demos)},
    })
    return {"base_demos": base_demos, "base_success": base_succ,
            "base_failure": base_fail, "novel_demos": novel_demos}


def _by_env(rollouts: list[Rollout]) -> dict[int, list[Rollout]]:
    d: dict[int, list[Rollout]] = {}
    for r in rollouts:
        d.setdefault(r.env_id, []).append(r)
    return d


class Workspace:
    """Lazy view over a generated output directory."""

    def __init__(self, out: Path):
        self.out = Path(out)
        manifest = self.out / "manifest.json"
        if not manifest.exists():
            raise PhaseOrderError(f"no manifest in {self.out}; run gen first")
        self.manifest = read_manifest(manifest)
        self.cfg = ExperimentConfig.from_dict(self.manifest["config"])
        self.seed = self.manifest["suite_seed"]
        self.specs = make_suite(suite_config(self.cfg), self.seed)
        self.base_specs = [s for s in self.specs if s.split == "base"]
        self.novel_specs = [s for s in self.specs if s.split == "novel"]
        self._cache: dict[str, list[Rollout]] = {}

    def rollouts(self, name: str) -> list[Rollout]:
        if name not in self._cache:
            self._cache[name] = load_rollouts(self.out / f"{name}.jsonl")
        return self._cache[name]

    def split_train_heldout(self, name: str):
        k = self.cfg.heldout_per_class
        train, held = {}, {}
        for env, rs in _by_env(self.rollouts(name)).items():
            train[env] = rs[:-k] if k else rs
            held[env] = rs[-k:] if k else []
        return train, held

    def demos_by_env(self, split: str) -> dict[int, list[Rollout]]:
        return _by_env(self.rollouts("base_demos" if split == "base" else "novel_demos"))

    def policy_path(self, variant: str, seed: int) -> Path:
        return self.out / f"policy_{variant}_s{seed}.ckpt"

    def detector_path(self, tag: str, variant: str, seed: int) -> Path:
        return self.out / f"detector_{tag}_{variant}_s{seed}.ckpt"


# ---------------------------------------------------------------------------
# phase 1: policy training


def train_policy_phase(ws: Workspace, variant: str, seed: int,
                       epochs: int | None = None) -> PolicyModel:
    cfg = ws.cfg
    demos_by_env = ws.demos_by_env("base")
    succ_by_env, _ = ws.split_train_heldout("base_success")
    pcfg = PolicyConfig(variant=variant, obs_dim=cfg.obs_dim, hidden=cfg.hidden,
                        feature=cfg.feature)
    tcfg = PolicyTrainConfig(epochs=epochs or cfg.policy_epochs, lr=cfg.lr, l2=cfg.l2,
                             seed=seed)
    log: list = []
    model = train_policy(variant, demos_by_env, succ_by_env, tcfg, pcfg, log=log)
    path = ws.policy_path(variant, seed)
    model.save(path)
    write_csv(ws.out / f"loss_policy_{variant}_s{seed}.csv", ["epoch", "loss"],
              [[i + 1, v] for i, v in enumerate(log)])
    return model


# ---------------------------------------------------------------------------
# phase 2: detector training


def _augment_fn(cfg: ExperimentConfig):
    if not cfg.augment:
        return None
    ac = AugmentConfig(*cfg.aug_probs)

    def fn(rollout, rng):
        return augment_rollout(rollout, ac, rng)

    return fn


def loss_config(cfg: ExperimentConfig, lam_pat=None, lam_tem=None) -> LossConfig:
    return LossConfig(lam_pat=cfg.lam_pat if lam_pat is None else lam_pat,
                      lam_tem=cfg.lam_tem if lam_tem is None else lam_tem,
                      lam_cls=cfg.lam_cls, margin=cfg.margin, alpha=cfg.alpha,
                      clip_frames=cfg.clip_frames, triplets=cfg.triplets)


def train_detector_phase(ws: Workspace, tag: str, seed: int, policy_variant: str,
                         epochs: int | None = None, extractor: str = "gated_sign",
                         lam_pat=None, lam_tem=None, augment: bool | None = None,
                         suffix: str = ""):
    cfg = ws.cfg
    demos_by_env = ws.demos_by_env("base")
    succ_by_env, _ = ws.split_train_heldout("base_success")
    fail_by_env, _ = ws.split_train_heldout("base_failure")
    aug = _augment_fn(cfg) if augment is None else (_augment_fn(cfg) if augment else None)
    epochs = epochs or cfg.detector_epochs
    log: list = []
    if tag == "probe":
        ppath = ws.policy_path(policy_variant, seed)
        if not ppath.exists():
            raise PhaseOrderError(
                f"probe training needs a trained policy checkpoint at {ppath}; "
                "run train-policy first")
        policy = PolicyModel.load(ppath)
        pcfg = ProbeConfig(feature=cfg.feature, task_dim=policy.config.task_dim,
                           extractor=extractor)
        tcfg = ProbeTrainConfig(epochs=epochs, lr=cfg.lr, l2=cfg.l2, seed=seed,
                                augment=aug is not None)
        model = train_probe(policy, demos_by_env, succ_by_env, fail_by_env,
                            loss_config(cfg, lam_pat, lam_tem), tcfg,
                            probe_cfg=pcfg, augment_fn=aug, log=log)
        header = ["epoch", "total", "pat", "tem", "cls"]
        rows = [[i + 1] + v for i, v in enumerate(log)]
    elif tag in ("svdded", "taskembed", "lstmed", "dcted"):
        bcfg = BaselineConfig(tag=tag, obs_dim=cfg.obs_dim, hidden=cfg.hidden,
                              feature=cfg.feature)
        tcfg = BaselineTrainConfig(epochs=epochs, lr=cfg.lr, l2=cfg.l2, seed=seed)
        model = train_baseline(tag, demos_by_env, succ_by_env, fail_by_env, tcfg,
                               model_cfg=bcfg, augment_fn=aug, log=log)
        header = ["epoch", "loss"]
        rows = [[i + 1, v] for i, v in enumerate(log)]
    else:
        raise ValueError(f"unknown detector {tag!r}")
    name = tag + suffix
    model.save(ws.detector_path(name, policy_variant, seed))
    write_csv(ws.out / f"loss_{name}_{policy_variant}_s{seed}.csv", header, rows)
    return model


def load_detector(ws: Workspace, tag: str, policy_variant: str, seed: int):
    path = ws.detector_path(tag, policy_variant, seed)
    if not path.exists():
        raise PhaseOrderError(f"missing detector checkpoint {path}; run train-detector first")
    if tag.startswith("probe"):
        return ProbeModel.load(path)
    return BaselineModel.load(path)


# ---------------------------------------------------------------------------
# scoring helpers


def score_rollout(tag: str, detector, policy: PolicyModel | None,
                  rollout: Rollout, demos: list[Rollout]) -> np.ndarray:
    if tag.startswith("probe"):
        return infer(detector, policy, rollout, demos)
    return detector.score_rollout(rollout, demos if detector.config.tag != "lstmed" else None)


def polarity_of(tag: str, detector) -> str:
    return "distance" if (not tag.startswith("probe") and detector.polarity == "distance") \
        else "probability"


def collect_policy_rollouts(ws: Workspace, policy: PolicyModel, seed: int,
                            perturb: float = 0.0) -> dict[int, list[Rollout]]:
    """Phase-3 rollouts: the policy executes in each novel environment."""
    cfg = ws.cfg
    novel_demos = ws.demos_by_env("novel")
    out: dict[int, list[Rollout]] = {}
    for spec in ws.novel_specs:
        if perturb:
            spec = with_perturbation(spec, perturb, seed)
        demos = novel_demos[spec.env_id][:5]
        rs = []
        for i in range(cfg.eval_rollouts_per_env):
            rs.append(rollout_policy(policy, spec, demos,
                                     rng_for(ws.seed, seed, spec.env_id, "eval", i)))
        out[spec.env_id] = rs
    return out


def frame_auroc_base(ws: Workspace, tag: str, detector, policy) -> float | None:
    """Frame-level AUROC on held-out base rollouts (labels are known there)."""
    _, held_succ = ws.split_train_heldout("base_success")
    _, held_fail = ws.split_train_heldout("base_failure")
    demos_by_env = ws.demos_by_env("base")
    pos, neg = [], []
    for env_id in sorted(held_succ):
        demos = demos_by_env[env_id][:5]
        for r in held_succ[env_id] + held_fail.get(env_id, []):
            scores = score_rollout(tag, detector, policy, r, demos)
            labels = r.labels
            pos.extend(scores[labels == 1].tolist())
            neg.extend(scores[labels == 0].tolist())
    if not pos or not neg:
        return None
    return oracle_auroc(pos, neg)


# ---------------------------------------------------------------------------
# phase 3: evaluation


def evaluate_phase(ws: Workspace, policy_variant: str, seed: int,
                   detectors: tuple | None = None, perturb: float | None = None,
                   export_embeddings: Path | None = None) -> list[dict]:
    cfg = ws.cfg
    perturb = cfg.perturb_scale if perturb is None else perturb
    ppath = ws.policy_path(policy_variant, seed)
    if not ppath.exists():
        raise PhaseOrderError(f"missing policy checkpoint {ppath}; run train-policy first")
    policy = PolicyModel.load(ppath)
    rollouts_by_env = collect_policy_rollouts(ws, policy, seed, perturb)
    novel_demos = ws.demos_by_env("novel")
    rows = []
    roc_curves = {}
    for tag in detectors or cfg.detectors:
        detector = load_detector(ws, tag, policy_variant, seed)
        scored = []
        emb_records = []
        for env_id in sorted(rollouts_by_env):
            demos = novel_demos[env_id][:5]
            for ri, r in enumerate(rollouts_by_env[env_id]):
                if tag.startswith("probe") and export_embeddings is not None:
                    scores, fused = infer(detector, policy, r, demos, return_embeddings=True)
                    for t in range(len(r.frames)):
                        emb_records.append({"rollout": f"{env_id}:{ri}", "frame": t,
                                            "label": int(r.frames[t].label),
                                            "vec": fused[t].tolist()})
                else:
                    scores = score_rollout(tag, detector, policy, r, demos)
                scored.append(ScoredRollout(scores=scores, outcome=r.outcome, onset=r.onset,
                                            env_id=env_id, detector=tag,
                                            polarity=polarity_of(tag, detector)))
        res = sweep(scored)
        a_roc, a_prc = auroc(res), auprc(res)
        acc = accuracy_at(scored, cfg.accuracy_threshold) \
            if polarity_of(tag, detector) == "probability" else None
        acc_strict = None
        if acc is not None and all(s.onset is not None for s in scored if s.outcome == "failure"):
            acc_strict = accuracy_at(scored, cfg.accuracy_threshold, mode="strict_timing")
        succ_max = [s.stat for s in scored if s.outcome == "success"]
        med_delay, thr = None, None
        if succ_max and any(s.outcome == "failure" for s in scored):
            thr = fpr_threshold(succ_max, cfg.fpr_target)
            delays = [timing_delay(s.scores, s.onset, thr) for s in scored
                      if s.outcome == "failure" and s.onset is not None]
            delays = [d for d in delays if d is not None]
            med_delay = float(np.median(delays)) if delays else None
        f_auroc = frame_auroc_base(ws, tag, detector, policy)
        n_fail = sum(1 for s in scored if s.outcome == "failure")
        rows.append({
            "detector": tag, "policy": policy_variant, "task": cfg.task, "seed": seed,
            "split": "novel", "n_success": len(scored) - n_fail, "n_failure": n_fail,
            "auroc": a_roc, "auprc": a_prc, "accuracy": acc, "accuracy_strict": acc_strict,
            "frame_auroc_base": f_auroc, "median_delay": med_delay, "thr_5fpr": thr,
            "degenerate": res.degenerate,
        })
        roc_curves[tag] = res.roc_points()
        if emb_records:
            with open(export_embeddings, "w", encoding="utf-8") as f:
                for rec in emb_records:
                    f.write(json.dumps(rec, separators=(",", ":")) + "\n")
    header = ["detector", "policy", "task", "seed", "split", "n_success", "n_failure",
              "auroc", "auprc", "accuracy", "accuracy_strict", "frame_auroc_base",
              "median_delay", "thr_5fpr", "degenerate"]
    out_csv = ws.out / f"metrics_{policy_variant}_s{seed}.csv"
    write_csv(out_csv, header, [[r[h] for h in header] for r in rows])
    svg_roc(roc_curves, ws.out / f"roc_{policy_variant}_s{seed}.svg",
            title=f"{cfg.task} / {policy_variant} / seed {seed}")
    return rows


# ---------------------------------------------------------------------------
# timing analysis (exact onsets from scripted interventions)


def timing_phase(ws: Workspace, policy_variant: str, seed: int,
                 detectors: tuple | None = None, per_env: int = 10) -> list[dict]:
    cfg = ws.cfg
    policy = PolicyModel.load(ws.policy_path(policy_variant, seed))
    novel_demos = ws.demos_by_env("novel")
    kinds = [k for k in APPLICABLE[cfg.task] if k != "none"]
    episodes: dict[int, list[Rollout]] = {}
    for spec in ws.novel_specs:
        rs = []
        for i in range(per_env):
            rs.append(run_scripted_agent(spec, "none", rng_for(ws.seed, seed, spec.env_id, "tsucc", i)))
            rs.append(run_scripted_agent(spec, kinds[i % len(kinds)],
                                         rng_for(ws.seed, seed, spec.env_id, "tfail", i)))
        episodes[spec.env_id] = rs
    rows = []
    traces: dict[str, np.ndarray] = {}
    trace_meta = None
    for tag in detectors or cfg.detectors:
        detector = load_detector(ws, tag, policy_variant, seed)
        scored = []
        for env_id in sorted(episodes):
            demos = novel_demos[env_id][:5]
            for r in episodes[env_id]:
                scores = score_rollout(tag, detector, policy, r, demos)
                scored.append((r, ScoredRollout(scores=scores, outcome=r.outcome,
                                                onset=r.onset, env_id=env_id, detector=tag,
                                                polarity=polarity_of(tag, detector))))
        succ_max = [s.stat for _, s in scored if s.outcome == "success"]
        thr = fpr_threshold(succ_max, cfg.fpr_target)
        delays, premature, missed = [], 0, 0
        for r, s in scored:
            if s.outcome != "failure":
                continue
            d = timing_delay(s.scores, r.onset, thr)
            if d is None:
                missed += 1
            elif d < 0:
                premature += 1
                delays.append(d)
            else:
                delays.append(d)
        med = float(np.median(delays)) if delays else None
        rows.append({"detector": tag, "policy": policy_variant, "task": cfg.task,
                     "seed": seed, "threshold_5fpr": thr, "median_delay": med,
                     "n_failures": sum(1 for _, s in scored if s.outcome == "failure"),
                     "premature": premature, "never_flagged": missed})
        fail_example = next((x for x in scored if x[1].outcome == "failure"), None)
        if fail_example is not None:
            traces[tag] = fail_example[1].scores
            trace_meta = (fail_example[0].onset, thr)
    header = ["detector", "policy", "task", "seed", "threshold_5fpr", "median_delay",
              "n_failures", "premature", "never_flagged"]
    write_csv(ws.out / f"timing_{policy_variant}_s{seed}.csv", header,
              [[r[h] for h in header] for r in rows])
    if traces and trace_meta:
        svg_traces(traces, ws.out / f"timing_traces_{policy_variant}_s{seed}.svg",
                   onset=trace_meta[0], threshold=trace_meta[1])
    return rows


# ---------------------------------------------------------------------------
# ablations


ABLATION_VARIANTS = (
    ("full", {}),
    ("naive_extractor", {"extractor": "naive_fc"}),
    ("no_pat", {"lam_pat": 0.0}),
    ("no_tem", {"lam_tem": 0.0}),
)


def ablate_phase(ws: Workspace, policy_variant: str, seeds: tuple,
                 epochs: int | None = None) -> list[dict]:
    rows = []
    for seed in seeds:
        for aug in (True, False):
            for name, kw in ABLATION_VARIANTS:
                suffix = f"__{name}_{'aug' if aug else 'noaug'}"
                train_detector_phase(ws, "probe", seed, policy_variant, epochs=epochs,
                                     augment=aug, suffix=suffix, **kw)
                res = evaluate_phase(ws, policy_variant, seed,
                                     detectors=(f"probe{suffix}",))[0]
                rows.append({"seed": seed, "augment": aug, "variant": name,
                             "auroc": res["auroc"], "auprc": res["auprc"]})
    header = ["seed", "augment", "variant", "auroc", "auprc"]
    write_csv(ws.out / f"ablation_{policy_variant}.csv", header,
              [[r[h] for h in header] for r in rows])
    return rows


# ---------------------------------------------------------------------------
# correction pilot


def correction_phase(ws: Workspace, seed: int, detector_tag: str | None = None,
                     policy_variant: str | None = None, pairs: int | None = None,
                     threshold: float | None = None) -> dict:
    """Paired episodes without/with correction on the suite's novel envs.

    With ``detector_tag=None`` the oracle (ground-truth audit) monitors a
    flaky scripted policy; otherwise the trained detector monitors the
    trained policy.
    """
    cfg = ws.cfg
    ccfg = CorrectionConfig(threshold=threshold or cfg.correction_threshold)
    n_pairs = pairs or cfg.correction_pairs
    specs = ws.novel_specs
    paired: list[tuple[EpisodeRecord, EpisodeRecord]] = []
    env_ids = []
    if detector_tag is None:
        for i in range(n_pairs):
            spec = specs[i % len(specs)]
            key = (ws.seed, seed, spec.env_id, "correct", i)
            base = run_with_correction(
                ScriptedMonitor(spec, rng_for(*key, "ctl"), flaky_p=cfg.flaky_p),
                spec, rng_for(*key, "env"), ccfg, enabled=False)
            corr = run_with_correction(
                ScriptedMonitor(spec, rng_for(*key, "ctl"), flaky_p=cfg.flaky_p),
                spec, rng_for(*key, "env"), ccfg, enabled=True)
            paired.append((base, corr))
            env_ids.append(spec.env_id)
        label = "oracle+flaky_scripted"
    else:
        policy = PolicyModel.load(ws.policy_path(policy_variant, seed))
        detector = load_detector(ws, detector_tag, policy_variant, seed)
        novel_demos = ws.demos_by_env("novel")
        for i in range(n_pairs):
            spec = specs[i % len(specs)]
            demos = novel_demos[spec.env_id][:5]
            key = (ws.seed, seed, spec.env_id, "correct", i)
            base = run_with_correction(
                PolicyMonitor(ProbeRunner(detector, policy, demos)),
                spec, rng_for(*key, "arm"), ccfg, enabled=False)
            corr = run_with_correction(
                PolicyMonitor(ProbeRunner(detector, policy, demos)),
                spec, rng_for(*key, "arm"), ccfg, enabled=True)
            paired.append((base, corr))
            env_ids.append(spec.env_id)
        label = f"{detector_tag}+{policy_variant}"
    report = compare_sr(paired, env_ids)
    report["arm"] = label
    report["threshold"] = ccfg.threshold
    report["seed"] = seed
    header = ["arm", "seed", "threshold", "n_pairs", "sr_without", "sr_with",
              "std_without", "std_with", "delta", "corrections"]
    path = ws.out / f"correction_{label.replace('+', '_')}_s{seed}.csv"
    write_csv(path, header, [[report[h] for h in header]])
    return report


# ---------------------------------------------------------------------------
# report collation


def collate_report(metric_rows: list[dict], metric: str = "auprc") -> dict:
    """Rank detectors per (task, policy, seed) case: Top-1 counts, average
    rank, and average performance difference (score - worst)/worst."""
    cases: dict[tuple, list[tuple[str, float]]] = {}
    for r in metric_rows:
        if r.get(metric) is None:
            continue
        cases.setdefault((r["task"], r["policy"], r["seed"]), []).append(
            (r["detector"], float(r[metric])))
    if not cases:
        raise ValueError(f"no rows carry metric {metric!r}")
    detectors = sorted({d for case in cases.values() for d, _ in case})
    top1 = {d: 0 for d in detectors}
    ranks = {d: [] for d in detectors}
    diffs = {d: [] for d in detectors}
    for case in cases.values():
        ordered = sorted(case, key=lambda kv: (-kv[1], kv[0]))
        worst = min(v for _, v in case)
        top1[ordered[0][0]] += 1
        for pos, (d, v) in enumerate(ordered):
            ranks[d].append(pos + 1)
            if worst > 0:
                diffs[d].append((v - worst) / worst)
    return {
        "metric": metric,
        "cases": len(cases),
        "top1": top1,
        "avg_rank": {d: float(np.mean(v)) for d, v in ranks.items() if v},
        "avg_perf_diff": {d: (float(np.mean(v)) if v else 0.0) for d, v in diffs.items()},
        "mean_score": {d: float(np.mean([dict(c).get(d) for c in cases.values()
                                         if d in dict(c)]))
                       for d in detectors},
    }


def report_phase(ws: Workspace, metric_rows: list[dict]) -> dict:
    summary = {m: collate_report(metric_rows, m) for m in ("auprc", "auroc")}
    agg: dict[tuple, list[float]] = {}
    for r in metric_rows:
        for m in ("auroc", "auprc"):
            if r.get(m) is not None:
                agg.setdefault((r["detector"], m), []).append(float(r[m]))
    summary["across_seeds"] = {
        f"{d}:{m}": {"mean": float(np.mean(v)), "std": float(np.std(v)), "n": len(v)}
        for (d, m), v in sorted(agg.items())}
    (ws.out / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    rows = []
    for d in sorted(summary["auprc"]["top1"]):
        rows.append([d, summary["auprc"]["top1"][d], summary["auprc"]["avg_rank"].get(d),
                     summary["auprc"]["avg_perf_diff"].get(d),
                     summary["auroc"]["top1"][d], summary["auroc"]["avg_rank"].get(d)])
    write_csv(ws.out / "report.csv",
              ["detector", "auprc_top1", "auprc_avg_rank", "auprc_avg_perf_diff",
               "auroc_top1", "auroc_avg_rank"], rows)
    return summary


def read_metric_rows(ws: Workspace) -> list[dict]:
    rows = []
    for path in sorted(ws.out.glob("metrics_*.csv")):
        with open(path, newline="", encoding="utf-8") as f:
            for rec in csv.DictReader(f):
                for k in ("auroc", "auprc", "accuracy", "accuracy_strict",
                          "frame_auroc_base", "median_delay", "thr_5fpr"):
                    rec[k] = float(rec[k]) if rec.get(k) else None
                rec["seed"] = int(rec["seed"])
                rows.append(rec)
    return rows
