"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from ..errors import HarnessError
from .optim import ParamSet
from .tensor import Tensor, no_grad

REL_ERR_FLOOR = 1e-6


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    per_param: dict[str, float] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)
    n_checked: int = 0


def grad_check(f: Callable[[], Tensor], params: ParamSet, h: float = 1e-4) -> GradCheckResult:
    """Compare analytic gradients of the scalar ``f()`` against central finite
    differences, one trainable scalar at a time.

    ``f`` must be deterministic (dropout off, fixed inputs); frozen parameters
    are reported as skipped, never perturbed.  Relative error uses a
    ``max(|analytic|, |fd|, 1e-6)`` denominator so flat points do not blow up.
    """
    if h <= 0:
        raise HarnessError(f"finite-difference step must be positive, got {h}")
    params.zero_grads()
    out = f()
    base = out.item()
    out.backward()
    analytic = {name: t.grad.copy() for name, t in params.trainable_items()}
    params.clear_grads()

    with no_grad():
        if f().item() != base:
            raise HarnessError("f() is not deterministic: two evaluations differ")

        result = GradCheckResult(max_rel_error=0.0, worst_param="")
        for name, t in params.items():
            if not t.requires_grad:
                result.skipped.append(name)
                continue
            flat = t.data.reshape(-1)
            grads = analytic[name].reshape(-1)
            worst = 0.0
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                f_plus = f().item()
                flat[i] = orig - h
                f_minus = f().item()
                flat[i] = orig
                fd = (f_plus - f_minus) / (2.0 * h)
                g = grads[i]
                rel = abs(fd - g) / max(abs(fd), abs(g), REL_ERR_FLOOR)
                if rel > worst:
                    worst = rel
                result.n_checked += 1
            result.per_param[name] = worst
            if worst > result.max_rel_error:
                result.max_rel_error = worst
                result.worst_param = name
    return result
