"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import core as F
from .core import Tensor


@dataclass
class GradcheckReport:
    passed: bool
    max_rel_error: float
    per_input: list[float] = field(default_factory=list)
    worst_input: int = -1
    worst_index: tuple = ()

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max relative error {self.max_rel_error:.3e} (input {self.worst_input} at {self.worst_index})"


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor): relative for large entries, absolute near zero."""
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence, eps: float = 1e-5, tol: float = 1e-3,
              floor: float = 1e-4, check: Sequence[bool] | None = None) -> GradcheckReport:
    """Compare tape gradients of the scalar ``fn(*inputs)`` with central differences.

    Runs in float64. ``check`` selects which inputs to differentiate (default:
    all floating inputs).
    """
    with F.precision(np.float64):
        base = [np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64) for x in inputs]
        check = list(check) if check is not None else [True] * len(base)
        tensors = [Tensor(b.copy(), requires_grad=c) for b, c in zip(base, check)]
        out = fn(*tensors)
        if out.size != 1:
            raise F.ShapeError(f"gradcheck needs a scalar function, got shape {out.shape}")
        out.backward()
        analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

        def evaluate(arrays):
            with F.no_grad():
                return float(fn(*[Tensor(a) for a in arrays]).data)

        per_input, worst, worst_in, worst_idx = [], 0.0, -1, ()
        for i, (b, c) in enumerate(zip(base, check)):
            if not c:
                per_input.append(0.0)
                continue
            numeric = np.zeros_like(b)
            for idx in np.ndindex(b.shape):
                arrays = [x.copy() for x in base]
                arrays[i][idx] = b[idx] + eps
                fp = evaluate(arrays)
                arrays[i][idx] = b[idx] - eps
                fm = evaluate(arrays)
                numeric[idx] = (fp - fm) / (2 * eps)
            err = relative_error(analytic[i], numeric, floor)
            e = float(err.max()) if err.size else 0.0
            per_input.append(e)
            if e > worst:
                worst, worst_in = e, i
                worst_idx = np.unravel_index(int(np.argmax(err)), err.shape) if err.size else ()
    return GradcheckReport(worst < tol, worst, per_input, worst_in, tuple(int(j) for j in worst_idx))
