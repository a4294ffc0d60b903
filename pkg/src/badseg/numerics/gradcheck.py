"""Central-difference validation of reverse-mode gradients.

The loss is re-evaluated in float64 at probe points so the difference
quotient is not drowned by float32 rounding; the analytic gradient comes
from one backward pass through the same code path.
"""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import NonFiniteError, Tensor

__all__ = ["grad_check"]


def grad_check(loss_fn: Callable[[Mapping[str, Tensor]], Tensor],
               params: Mapping[str, np.ndarray | Tensor],
               step: float = 1e-3,
               n_probes: int = 100,
               seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Probes `n_probes` coordinates sampled uniformly across all parameters
    (deterministic per seed).  Error metric per coordinate:
    |analytic - fd| / max(1, |fd|).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    base = {
        name: np.asarray(p.data if isinstance(p, Tensor) else p, dtype=np.float64)
        for name, p in params.items()
    }
    names = sorted(base)

    leaves = {n: Tensor(base[n].copy(), requires_grad=True) for n in names}
    loss = loss_fn(leaves)
    if not np.isfinite(loss.data):
        raise NonFiniteError("loss is non-finite at the base point")
    loss.backward()
    analytic = {
        n: (leaves[n].grad if leaves[n].grad is not None
            else np.zeros_like(base[n]))
        for n in names
    }

    def eval_at(values: dict[str, np.ndarray]) -> float:
        out = loss_fn({n: Tensor(values[n]) for n in names})
        v = float(out.data)
        if not np.isfinite(v):
            raise NonFiniteError("loss is non-finite at a probe point")
        return v

    sizes = np.array([base[n].size for n in names])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    count = min(n_probes, total)
    flat_idx = rng.choice(total, size=count, replace=False)

    offsets = np.concatenate([[0], np.cumsum(sizes)])
    max_err = 0.0
    for fi in sorted(flat_idx):
        which = int(np.searchsorted(offsets, fi, side="right") - 1)
        name = names[which]
        local = int(fi - offsets[which])
        plus = {n: base[n] for n in names}
        probe = base[name].copy()
        probe.flat[local] += step
        plus[name] = probe
        lp = eval_at(plus)
        probe2 = base[name].copy()
        probe2.flat[local] -= step
        plus[name] = probe2
        lm = eval_at(plus)
        fd = (lp - lm) / (2.0 * step)
        an = float(analytic[name].flat[local])
        err = abs(an - fd) / max(1.0, abs(fd))
        max_err = max(max_err, err)
    return max_err
