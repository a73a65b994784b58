"""Central finite-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .autograd import Tape, Tensor, backward, no_grad


@dataclass
class ParamCheck:
    name: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    max_abs_error: float
    max_rel_error: float
    tolerance: float
    per_parameter: list[ParamCheck] = field(default_factory=list)
    diagnostic: str = ""

    @property
    def passed(self) -> bool:
        return not self.diagnostic and self.max_rel_error <= self.tolerance

    def worst(self) -> ParamCheck | None:
        return max(self.per_parameter, key=lambda c: c.rel_error, default=None)


def _scalar(f: Callable[[], Tensor]) -> float:
    with no_grad():
        return float(np.asarray(f().data).reshape(()))


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-4,
    tol: float = 1e-3,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare tape gradients of ``f()`` against central differences.

    ``f`` takes no arguments and reads the tensors in ``params``, which are
    perturbed in place and restored. With ``max_entries`` only that many
    entries per parameter (drawn with ``rng``) are probed.
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    with Tape() as tape:
        loss = f()
    if not np.all(np.isfinite(loss.data)):
        return GradCheckReport(np.inf, np.inf, tol, diagnostic=f"non-finite loss {loss.data}")
    backward(tape, loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in params.items()
    }

    rng = rng or np.random.default_rng(0)
    checks: list[ParamCheck] = []
    max_abs = 0.0
    max_rel = 0.0
    for name, p in params.items():
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        idxs = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idxs = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        for k in idxs:
            orig = flat[k]
            flat[k] = orig + h
            fp = _scalar(f)
            flat[k] = orig - h
            fm = _scalar(f)
            flat[k] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                return GradCheckReport(
                    np.inf, np.inf, tol, checks, diagnostic=f"non-finite loss while perturbing {name}[{k}]"
                )
            num = (fp - fm) / (2.0 * h)
            ana = float(analytic[name].reshape(-1)[k])
            err = abs(ana - num)
            rel = err / max(abs(ana), abs(num), 1e-8)
            max_abs = max(max_abs, err)
            max_rel = max(max_rel, rel)
            checks.append(ParamCheck(name, np.unravel_index(k, p.shape), ana, num, rel))
    return GradCheckReport(max_abs, max_rel, tol, checks)
