"""Central finite-difference gradient checking.

Compares an analytic gradient to ``(f(x + h e_i) - f(x - h e_i)) / 2h`` per
coordinate. The error is max-normalised:

    err_i = |numeric_i - analytic_i| / max_j max(|numeric_j|, |analytic_j|)

so tiny gradient entries are judged on the scale of the whole vector.

Coordinates where a piecewise function changes piece under the perturbation
(e.g. a sparsemax support changes) are *kinks*: they are reported separately
and not judged. Kinks are detected by an optional ``signature`` callable whose
return value identifies the active piece at a point.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, List, Optional

import numpy as np

logger = logging.getLogger(__name__)

_SCALE_FLOOR = 1e-8


@dataclass
class GradCheckReport:
    """Per-coordinate outcome of a finite-difference check."""
    n_coords: int
    failing: List[int] = field(default_factory=list)
    kinks: List[int] = field(default_factory=list)
    nonfinite: List[int] = field(default_factory=list)
    max_rel_error: float = 0.0
    numeric: Optional[np.ndarray] = None

    @property
    def passed(self) -> bool:
        return not self.failing and not self.nonfinite

    @property
    def kink_fraction(self) -> float:
        return len(self.kinks) / self.n_coords if self.n_coords else 0.0

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} coords={self.n_coords} failing={len(self.failing)} "
            f"kinks={len(self.kinks)} nonfinite={len(self.nonfinite)} "
            f"max_rel_err={self.max_rel_error:.3e}"
        )


def finite_difference_check(
    f: Callable[[np.ndarray], float],
    x,
    analytic_grad,
    step: float = 1e-5,
    rel_tol: float = 1e-4,
    signature: Optional[Callable[[np.ndarray], Hashable]] = None,
    coords: Optional[Iterable[int]] = None,
) -> GradCheckReport:
    """Check ``analytic_grad`` against central differences of ``f`` at ``x``.

    Parameters
    ----------
    f : callable
        Scalar function of a flat parameter vector.
    x : array-like
        Point to check at (flattened copy is used; ``x`` is not modified).
    analytic_grad : array-like
        Gradient to verify, same size as ``x``.
    step : float
        Perturbation ``h``.
    rel_tol : float
        Max-normalised error tolerance.
    signature : callable, optional
        Piece identifier; a coordinate whose signature differs between
        ``x - h e_i``, ``x`` and ``x + h e_i`` is reported as a kink.
    coords : iterable of int, optional
        Subset of coordinates to check (default all).

    Returns
    -------
    GradCheckReport
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x0 = np.array(x, dtype=np.float64).ravel()
    grad = np.array(analytic_grad, dtype=np.float64).ravel()
    if grad.shape != x0.shape:
        raise ValueError(f"gradient size {grad.size} does not match point size {x0.size}")

    idx = list(range(x0.size)) if coords is None else [int(i) for i in coords]
    base_sig = signature(x0) if signature is not None else None
    report = GradCheckReport(n_coords=len(idx))
    numeric = np.full(x0.size, np.nan)
    judged: List[int] = []

    for i in idx:
        xp = x0.copy()
        xp[i] += step
        xm = x0.copy()
        xm[i] -= step
        fp = float(f(xp))
        fm = float(f(xm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            report.nonfinite.append(i)
            continue
        if signature is not None and not (signature(xp) == base_sig == signature(xm)):
            report.kinks.append(i)
            continue
        numeric[i] = (fp - fm) / (2.0 * step)
        judged.append(i)

    if judged:
        num = numeric[judged]
        ana = grad[judged]
        scale = max(np.max(np.abs(num)), np.max(np.abs(ana)), _SCALE_FLOOR)
        errors = np.abs(num - ana) / scale
        report.max_rel_error = float(errors.max())
        report.failing = [i for i, e in zip(judged, errors) if e > rel_tol]

    report.numeric = numeric
    if report.nonfinite:
        logger.warning(f"Gradient check: {len(report.nonfinite)} coordinate(s) gave non-finite values")
    logger.debug(f"Gradient check: {report.summary()}")
    return report
