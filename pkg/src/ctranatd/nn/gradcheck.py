"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ctranatd.nn.tensor import Parameter, Tensor3

FD_STEP = 1e-5
# denominators below this are treated as this; keeps near-zero entries from
# dominating the relative error with rounding noise
REL_FLOOR = 1e-6


@dataclass
class GradCheckEntry:
    name: str
    size: int
    max_abs_error: float
    max_rel_error: float


@dataclass
class GradCheckReport:
    tolerance: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    @property
    def failures(self) -> list[GradCheckEntry]:
        return [e for e in self.entries if e.max_rel_error >= self.tolerance]

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max_rel_error={self.max_rel_error:.3e} tol={self.tolerance:.1e}"


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(
    fragment: Callable[..., Tensor3],
    inputs: Sequence[np.ndarray],
    params: Sequence[Parameter] = (),
    tolerance: float = 1e-4,
    step: float = FD_STEP,
    seed: int = 0,
) -> GradCheckReport:
    """Compare backward-pass gradients of ``fragment`` with central differences.

    ``fragment`` receives one :class:`Tensor3` per array in ``inputs`` and
    returns a Tensor3.  It is reduced to a scalar by a fixed random
    projection, so every output element contributes.  Every input element
    and every parameter element is perturbed.
    """
    base = [np.array(a, dtype=np.float64) for a in inputs]
    probe_out = fragment(*[Tensor3(a) for a in base])
    proj = np.random.default_rng(seed).standard_normal(probe_out.shape)

    def scalar() -> float:
        return float((fragment(*[Tensor3(a) for a in base]).data * proj).sum())

    for p in params:
        p.zero_grad()
    tensors = [Tensor3(a) for a in base]
    out = fragment(*tensors)
    out.backward(proj)
    analytic = {f"input[{i}]": t.grad.copy() for i, t in enumerate(tensors)}
    analytic.update({p.name: p.grad.copy() for p in params})

    report = GradCheckReport(tolerance=tolerance)
    targets: list[tuple[str, np.ndarray]] = [(f"input[{i}]", a) for i, a in enumerate(base)]
    targets += [(p.name, p.value) for p in params]
    for name, arr in targets:
        numeric = np.zeros_like(arr)
        flat = arr.reshape(-1)
        nflat = numeric.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = scalar()
            flat[j] = orig - step
            down = scalar()
            flat[j] = orig
            nflat[j] = (up - down) / (2.0 * step)
        a = analytic[name]
        err = relative_error(a, numeric)
        report.entries.append(
            GradCheckEntry(
                name=name,
                size=int(arr.size),
                max_abs_error=float(np.max(np.abs(a - numeric), initial=0.0)),
                max_rel_error=float(np.max(err, initial=0.0)),
            )
        )
    return report
