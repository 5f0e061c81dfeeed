"""Sequence-level detection metrics from threshold sweeps.

A rollout is flagged at a threshold if any per-frame score reaches it; the
positive class is a failed rollout. Sweeps use 5000 linearly spaced
thresholds (0..1 for probabilities, observed min..max for distances).
AUROC is the trapezoidal area under the ROC points; AUPRC uses the
average-precision step rule. Exact oracles (pairwise Mann-Whitney with
ties at 0.5, and exact AP over distinct thresholds) bound the sweep error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_THRESHOLDS = 5000


@dataclass
class ScoredRollout:
    scores: np.ndarray
    outcome: str                    # success | failure
    onset: int | None
    env_id: int
    detector: str = ""
    polarity: str = "probability"   # probability | distance

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)

    @property
    def stat(self) -> float:
        return float(self.scores.max())


def sequence_decision(scores, threshold: float) -> tuple[bool, int | None]:
    """Flagged iff any score >= threshold; returns the earliest such frame."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("empty score sequence")
    hits = np.flatnonzero(scores >= threshold)
    if hits.size == 0:
        return False, None
    return True, int(hits[0])


def classify(flagged: bool, first_idx: int | None, outcome: str, onset: int | None,
             mode: str = "sequence", window: int = 0) -> str:
    """Sequence-level accuracy rules; strict_timing additionally requires the
    first flag to land no earlier than ``onset - window``."""
    if mode not in ("sequence", "strict_timing"):
        raise ValueError(f"unknown mode {mode!r}")
    if outcome == "success":
        return "FP" if flagged else "TN"
    if not flagged:
        return "FN"
    if mode == "sequence":
        return "TP"
    if onset is None:
        raise ValueError("strict_timing needs an error onset")
    return "TP" if first_idx >= onset - window else "FP"


@dataclass
class SweepResult:
    thresholds: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    tn: np.ndarray
    fn: np.ndarray
    n_pos: int
    n_neg: int
    mode: str = "sequence"
    degenerate: bool = False
    notes: list = field(default_factory=list)

    def roc_points(self) -> np.ndarray:
        tpr = self.tp / max(self.n_pos, 1)
        fpr = self.fp / max(self.n_neg, 1)
        return np.column_stack([fpr, tpr])

    def pr_points(self) -> np.ndarray:
        predicted = self.tp + self.fp
        recall = self.tp / max(self.n_pos, 1)
        precision = np.where(predicted > 0, self.tp / np.maximum(predicted, 1), 1.0)
        return np.column_stack([recall, precision])


def threshold_grid(scored: list[ScoredRollout], n: int = N_THRESHOLDS) -> np.ndarray:
    """Linear grid: 0..1 for probability scores, observed min..max otherwise."""
    if any(s.polarity == "distance" for s in scored):
        stats = np.array([s.stat for s in scored])
        lo, hi = float(stats.min()), float(stats.max())
        if hi <= lo:
            hi = lo + 1.0
        return np.linspace(lo, hi, n)
    return np.linspace(0.0, 1.0, n)


def sweep(scored: list[ScoredRollout], n_thresholds: int = N_THRESHOLDS,
          mode: str = "sequence", window: int = 0) -> SweepResult:
    """Confusion counts at every threshold (vectorized over the grid)."""
    if not scored:
        raise ValueError("no scored rollouts")
    thr = threshold_grid(scored, n_thresholds)
    pos = [s for s in scored if s.outcome == "failure"]
    neg = [s for s in scored if s.outcome == "success"]
    notes = []
    degenerate = not pos or not neg
    if degenerate:
        notes.append("single-class input: curve areas are degenerate")

    neg_max = np.sort([s.stat for s in neg]) if neg else np.empty(0)
    fp_neg = len(neg) - np.searchsorted(neg_max, thr, side="left")
    tn = len(neg) - fp_neg

    pos_max = np.sort([s.stat for s in pos]) if pos else np.empty(0)
    flagged = len(pos) - np.searchsorted(pos_max, thr, side="left")
    fn = len(pos) - flagged
    if mode == "sequence":
        tp = flagged
        fp = fp_neg
    elif mode == "strict_timing":
        pre = []
        for s in pos:
            if s.onset is None:
                raise ValueError("strict_timing needs onsets on failure rollouts")
            cut = max(s.onset - window, 0)
            pre.append(s.scores[:cut].max() if cut > 0 else -np.inf)
        pre = np.sort(pre)
        early = len(pos) - np.searchsorted(pre, thr, side="left")  # flagged too early
        tp = flagged - early
        fp = fp_neg + early
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return SweepResult(thresholds=thr, tp=tp, fp=fp, tn=tn, fn=fn,
                       n_pos=len(pos), n_neg=len(neg),
                       mode=mode, degenerate=degenerate, notes=notes)


def auroc(result: SweepResult) -> float:
    pts = result.roc_points()
    order = np.argsort(pts[:, 0], kind="stable")
    fpr, tpr = pts[order, 0], pts[order, 1]
    fpr = np.concatenate([[0.0], fpr, [1.0]])
    tpr = np.concatenate([[0.0], tpr, [1.0]])
    return float(np.trapezoid(tpr, fpr))


def auprc(result: SweepResult) -> float:
    """Average-precision step rule over the sweep's PR points."""
    pts = result.pr_points()[::-1]  # descending threshold: recall ascending
    recall, precision = pts[:, 0], pts[:, 1]
    prev_r = 0.0
    area = 0.0
    for r, p in zip(recall, precision):
        if r > prev_r:
            area += (r - prev_r) * p
            prev_r = r
    return float(area)


# ---------------------------------------------------------------------------
# exact oracles


def oracle_auroc(pos_scores, neg_scores) -> float:
    """Pairwise Mann-Whitney probability, ties counted 0.5 (rank-computed)."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("oracle_auroc needs both classes")
    both = np.concatenate([pos, neg])
    order = np.argsort(both, kind="mergesort")
    ranks = np.empty_like(both)
    sorted_vals = both[order]
    # average ranks over ties
    i = 0
    rank_vals = np.arange(1, both.size + 1, dtype=np.float64)
    while i < both.size:
        j = i
        while j + 1 < both.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        rank_vals[i:j + 1] = 0.5 * (i + 1 + j + 1)
        i = j + 1
    ranks[order] = rank_vals
    r_pos = ranks[:pos.size].sum()
    u = r_pos - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def oracle_ap(pos_scores, neg_scores) -> float:
    """Exact average precision over distinct score thresholds."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.size == 0:
        raise ValueError("oracle_ap needs positives")
    scores = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(pos.size), np.zeros(neg.size)])
    order = np.argsort(-scores, kind="mergesort")
    scores, labels = scores[order], labels[order]
    distinct = np.flatnonzero(np.diff(scores)) if scores.size > 1 else np.empty(0, dtype=int)
    cuts = np.concatenate([distinct, [scores.size - 1]]).astype(int)
    tp = np.cumsum(labels)[cuts]
    predicted = cuts + 1.0
    precision = tp / predicted
    recall = tp / pos.size
    prev_r = 0.0
    area = 0.0
    for r, p in zip(recall, precision):
        if r > prev_r:
            area += (r - prev_r) * p
            prev_r = r
    return float(area)


# ---------------------------------------------------------------------------
# aggregation and timing


def accuracy_at(scored: list[ScoredRollout], threshold: float,
                mode: str = "sequence", window: int = 0) -> float:
    """Mean over environments of per-environment mean decision correctness."""
    by_env: dict[int, list[int]] = {}
    for s in scored:
        flagged, first = sequence_decision(s.scores, threshold)
        verdict = classify(flagged, first, s.outcome, s.onset, mode, window)
        by_env.setdefault(s.env_id, []).append(1 if verdict in ("TP", "TN") else 0)
    if not by_env:
        raise ValueError("no rollouts to aggregate")
    return float(np.mean([np.mean(by_env[k]) for k in sorted(by_env)]))


def mean_std(values, ddof: int = 0) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=ddof))


def timing_delay(scores, onset: int, threshold: float) -> int | None:
    """first_flag_index - onset; negative = premature, None = never flagged."""
    flagged, first = sequence_decision(scores, threshold)
    if not flagged:
        return None
    return int(first - onset)


def fpr_threshold(success_maxima, fpr: float = 0.05) -> float:
    """Threshold whose false-positive rate on success rollouts is ~fpr."""
    m = np.asarray(success_maxima, dtype=np.float64)
    if m.size == 0:
        raise ValueError("need success rollouts to calibrate a threshold")
    return float(np.quantile(m, 1.0 - fpr))
