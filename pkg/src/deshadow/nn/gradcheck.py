"""Finite-difference verification of analytic gradients.

The checker perturbs individual parameter entries by a central-difference
step and compares the numeric slope against the gradient produced by the
tape.  It runs in 64-bit mode only; float32 rounding would drown the signal.

Non-smooth ops (relu, clamp) are handled by sign-pattern monitoring: both
probe evaluations record which side of the kink every activation fell on,
and entries whose probes disagree are discarded as invalid finite-difference
estimates rather than reported as gradient errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError
from .tensor import Parameter, Tensor, backward, record_kinks


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    checked: int
    skipped: int


@dataclass
class GradCheckReport:
    step_size: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def failures(self, tolerance: float) -> list[GradCheckEntry]:
        return [e for e in self.entries if e.max_rel_err > tolerance]

    def passes(self, tolerance: float) -> bool:
        return not self.failures(tolerance)

    def summary(self) -> str:
        lines = [f"grad check (h={self.step_size:g}):"]
        for e in self.entries:
            lines.append(
                f"  {e.name}: max_rel_err={e.max_rel_err:.3e}"
                f" checked={e.checked} skipped={e.skipped}"
            )
        return "\n".join(lines)


def _eval_with_signs(loss_fn) -> tuple[float, list[np.ndarray]]:
    signs: list[np.ndarray] = []
    with record_kinks(signs):
        value = loss_fn()
    if not isinstance(value, Tensor) or value.data.size != 1:
        raise ContractError("grad_check: loss_fn must return a scalar Tensor")
    return float(value.data), signs


def _same_signs(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    if len(a) != len(b):
        return False
    return all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(
    loss_fn,
    params: list[Parameter],
    *,
    step: float = 1e-5,
    samples_per_param: int = 25,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of ``loss_fn`` against central differences.

    ``loss_fn`` must rebuild the forward graph from the current parameter
    values on every call.  For parameters larger than ``samples_per_param``
    a random subset of entries is probed.  The per-parameter relative error
    is ``|analytic - numeric| / max(|analytic|_inf, |a_i|, |n_i|, 1e-6)``.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    for p in params:
        if p.data.dtype != np.float64:
            raise ContractError(f"grad_check requires 64-bit parameters, {p.name!r} is {p.data.dtype}")
        if p.frozen:
            raise ContractError(f"grad_check: parameter {p.name!r} is frozen")
        p.grad = None

    loss = loss_fn()
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ContractError("grad_check: loss_fn must return a scalar Tensor")
    backward(loss)
    analytic = {}
    for p in params:
        if p.grad is None:
            raise ContractError(f"grad_check: no gradient reached parameter {p.name!r}")
        analytic[p.name] = p.grad.copy()
        p.grad = None

    report = GradCheckReport(step_size=step)
    for p in params:
        grad = analytic[p.name]
        scale = float(np.abs(grad).max())
        size = p.data.size
        flat = p.data.reshape(-1)
        if size <= samples_per_param:
            candidates = list(range(size))
        else:
            # oversample so kink-contaminated entries can be replaced
            n_cand = min(size, 2 * samples_per_param)
            candidates = list(rng.choice(size, size=n_cand, replace=False))
        max_rel = 0.0
        checked = 0
        skipped = 0
        for idx in candidates:
            if checked >= samples_per_param:
                break
            original = flat[idx]
            flat[idx] = original + step
            f_plus, signs_plus = _eval_with_signs(loss_fn)
            flat[idx] = original - step
            f_minus, signs_minus = _eval_with_signs(loss_fn)
            flat[idx] = original
            if not _same_signs(signs_plus, signs_minus):
                skipped += 1
                continue
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(grad.reshape(-1)[idx])
            denom = max(scale, abs(a), abs(numeric), 1e-6)
            max_rel = max(max_rel, abs(a - numeric) / denom)
            checked += 1
        report.entries.append(GradCheckEntry(p.name, max_rel, checked, skipped))
    return report
