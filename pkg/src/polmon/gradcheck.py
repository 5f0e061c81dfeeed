"""Central finite-difference checks for analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tape, Tensor, backward


@dataclass
class GradCheckReport:
    rel_tolerance: float
    max_rel_err: dict[str, float] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values()) if self.max_rel_err else 0.0

    @property
    def passed(self) -> bool:
        return self.worst < self.rel_tolerance

    def summary(self) -> str:
        lines = [f"{'PASS' if self.passed else 'FAIL'} (tol {self.rel_tolerance:g})"]
        for name in sorted(self.max_rel_err):
            lines.append(f"  {name}: max rel err {self.max_rel_err[name]:.3e}")
        return "\n".join(lines)


def _rel_err(a: float, n: float) -> float:
    denom = max(abs(a), abs(n))
    if denom < 1e-8:
        return 0.0
    return abs(a - n) / denom


def grad_check(loss_fn, params: dict[str, Tensor], rel_tolerance: float = 1e-4,
               step: float = 1e-5, max_coords: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare analytic gradients of ``loss_fn(tape) -> scalar Tensor`` against
    central differences.

    ``loss_fn`` must be deterministic and close over ``params``. When
    ``max_coords`` is given, that many coordinates per block are sampled
    (for large models); otherwise every coordinate is perturbed.
    """
    for p in params.values():
        p.zero_grad()
    tape = Tape()
    out = loss_fn(tape)
    backward(tape, out)
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for name, p in params.items()}
    for p in params.values():
        p.zero_grad()

    report = GradCheckReport(rel_tolerance=rel_tolerance)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        idxs = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            if rng is None:
                rng = np.random.default_rng(0)
            idxs = rng.choice(flat.size, size=max_coords, replace=False)
        worst = 0.0
        for i in idxs:
            saved = flat[i]
            flat[i] = saved + step
            hi = float(loss_fn(None).data)
            flat[i] = saved - step
            lo = float(loss_fn(None).data)
            flat[i] = saved
            numeric = (hi - lo) / (2.0 * step)
            worst = max(worst, _rel_err(float(analytic[name].reshape(-1)[i]), numeric))
        report.max_rel_err[name] = worst
    return report
