"""Central-difference gradient checking for the kernel library.

The checker perturbs every element of every input tensor by +/-h, evaluates a
scalar loss, and compares the finite-difference ratio against the analytic
gradient produced by backward().  Relative error is measured per tensor as

    max |analytic - numeric| / max(1, |numeric|)

so tiny gradients do not blow up the ratio.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    """Outcome of one finite-difference check.

    ``per_param`` maps tensor labels to their worst relative error;
    ``max_rel_error`` is the maximum over all checked tensors.
    """

    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)
    h: float = 0.0
    dtype: str = "float32"

    def __post_init__(self):
        if self.per_param:
            worst = max(self.per_param.values())
            if not np.isclose(self.max_rel_error, worst, rtol=0, atol=0):
                raise ValueError("max_rel_error must equal the max over per_param")


def check_gradients(
    build_loss: Callable[[Sequence[Tensor]], Tensor],
    inputs: Sequence[np.ndarray],
    names: Sequence[str] | None = None,
    h: float | None = None,
    dtype=np.float32,
) -> GradCheckReport:
    """Compare analytic and central-difference gradients of a scalar loss.

    ``build_loss`` receives freshly wrapped tensors (requires_grad=True) and
    must return a scalar Tensor; it is re-invoked for every perturbation so it
    must be deterministic.  ``h`` defaults to 1e-3 for float32 and 1e-5 for
    float64.
    """
    dtype = np.dtype(dtype)
    if h is None:
        h = 1e-3 if dtype == np.float32 else 1e-5
    if names is None:
        names = [f"input{i}" for i in range(len(inputs))]
    if len(names) != len(inputs):
        raise ValueError("names and inputs must align")

    base = [np.array(a, dtype=dtype) for a in inputs]

    def run(arrays) -> tuple[float, list[np.ndarray | None]]:
        tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        loss = build_loss(tensors)
        loss.backward()
        return float(loss.data), [t.grad for t in tensors]

    _, analytic = run(base)

    per_param: dict[str, float] = {}
    for idx, (name, arr) in enumerate(zip(names, base)):
        ana = analytic[idx]
        if ana is None:
            ana = np.zeros_like(arr)
        numeric = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        num_flat = numeric.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            plus = run_loss_only(build_loss, base)
            flat[j] = orig - h
            minus = run_loss_only(build_loss, base)
            flat[j] = orig
            num_flat[j] = (plus - minus) / (2.0 * h)
        denom = max(1.0, float(np.abs(numeric).max()))
        per_param[name] = float(np.abs(ana.astype(np.float64) - numeric).max() / denom)

    worst = max(per_param.values()) if per_param else 0.0
    return GradCheckReport(max_rel_error=worst, per_param=per_param, h=h, dtype=dtype.name)


def run_loss_only(build_loss, arrays) -> float:
    tensors = [Tensor(a.copy(), requires_grad=False) for a in arrays]
    return float(build_loss(tensors).data)
