"""Lifted iterative learning control laws and campaign runner.

Every law has the form ``u[l+1] = E Q (u[l] + L[l] (r - Q y[l]))`` and
differs only in the learning matrix ``L[l]``:

* ``nilc``     inverse of the forward-model Jacobian at ``u[l]``
* ``ililc``    Jacobian of the lifted inverse model at ``y[l]``
* ``gradient`` ``gamma`` times the transposed forward-model Jacobian
* ``ptype``    a scalar gain times the identity
* ``fixed``    a user-supplied constant matrix
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import IllConditionedWarning, NonDifferentiablePointWarning
from .io import to_jsonable, write_csv, write_jsonl
from .lifted import LiftedFilterSet, LiftedModel, condition_number, jacobian

ILL_CONDITIONED = 1e12
DEFAULT_TOLERANCE = 5e-4


class SchemeKind(str, enum.Enum):
    NILC = "nilc"
    ILILC = "ililc"
    GRADIENT = "gradient"
    PTYPE = "ptype"
    FIXED = "fixed"


@dataclass(frozen=True)
class IlcScheme:
    """Learning law selection.

    ``gain`` is the step size for ``gradient`` and the scalar gain for
    ``ptype``. With ``naive=True`` the NILC Jacobian is inverted through its
    full SVD with no singular-value cutoff.
    """

    kind: SchemeKind
    gain: float | None = None
    filters: LiftedFilterSet | None = None
    naive: bool = True
    matrix: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        kind = SchemeKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is SchemeKind.GRADIENT and not (self.gain is not None and self.gain > 0):
            raise ValueError("gradient ILC needs a positive step size")
        if kind is SchemeKind.PTYPE and not (self.gain is not None and math.isfinite(self.gain)):
            raise ValueError("P-type ILC needs a finite gain")
        if kind is SchemeKind.FIXED and self.matrix is None:
            raise ValueError("fixed ILC needs a learning matrix")


@dataclass
class ControlModels:
    forward: LiftedModel | None = None
    inverse: LiftedModel | None = None


@dataclass(frozen=True)
class TrialLog:
    trial: int
    u: np.ndarray
    y: np.ndarray
    e: np.ndarray
    nrmse: float
    peak_error: float
    condition: float | None
    seeds: dict
    nonfinite: bool = False
    notes: tuple = ()

    def summary(self) -> dict:
        return {"trial": self.trial, "nrmse": self.nrmse, "peak_error": self.peak_error,
                "condition": self.condition, "nonfinite": self.nonfinite,
                "u_inf": float(np.max(np.abs(self.u))) if np.all(np.isfinite(self.u))
                else float("nan")}


def nrmse(e, r) -> float:
    """Root-mean-square error normalized by the reference's largest magnitude."""
    e = np.asarray(e, dtype=float)
    return float(np.sqrt(np.mean(e * e)) / np.max(np.abs(r)))


def naive_inverse(J) -> np.ndarray:
    """SVD inverse with every singular value kept."""
    U, s, Vt = np.linalg.svd(J)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        return (Vt.T / s) @ U.T


def learning_matrix(scheme: IlcScheme, models: ControlModels, u_l, y_l,
                    diagnostics: dict | None = None) -> np.ndarray:
    """Learning matrix for trial ``l``; condition numbers go into ``diagnostics``."""
    diag = diagnostics if diagnostics is not None else {}
    kind = scheme.kind
    if kind is SchemeKind.PTYPE:
        return scheme.gain * np.eye(len(u_l))
    if kind is SchemeKind.FIXED:
        return np.asarray(scheme.matrix, dtype=float)
    if kind is SchemeKind.ILILC:
        if models.inverse is None:
            raise ValueError("ILILC needs a lifted inverse model")
        L = jacobian(models.inverse, y_l)
        diag["condition"] = condition_number(L)
        return L
    if models.forward is None:
        raise ValueError(f"{kind.value} needs a lifted forward model")
    J = jacobian(models.forward, u_l)
    kappa = condition_number(J)
    diag["condition"] = kappa
    if kind is SchemeKind.GRADIENT:
        return scheme.gain * J.T
    # NILC
    if kappa > ILL_CONDITIONED:
        diag["warning"] = f"ill-conditioned Jacobian (condition {kappa:.3e})"
        warnings.warn(diag["warning"], IllConditionedWarning, stacklevel=2)
    if scheme.naive:
        return naive_inverse(J)
    return np.linalg.solve(J, np.eye(J.shape[0]))


def filtered_error(r, y, filters: LiftedFilterSet | None):
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    return r - (filters.Q @ y if filters is not None else y)


def ilc_step(u_l, e_l_filtered, L, filters: LiftedFilterSet | None = None) -> np.ndarray:
    """``E Q (u + L e)``, or ``u + L e`` without filters."""
    with np.errstate(over="ignore", invalid="ignore"):
        v = np.asarray(u_l, dtype=float) + np.asarray(L) @ np.asarray(e_l_filtered, dtype=float)
        if filters is None:
            return v
        return filters.E @ (filters.Q @ v)


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, trial)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, trial])))


def run_campaign(scheme: IlcScheme, truth_sim: Callable, control_models: ControlModels,
                 r, n_trials: int, rng_seed: int = 0, u0=None,
                 progress: Callable | None = None,
                 stop_below: float | None = None) -> list[TrialLog]:
    """Run ``n_trials`` trials starting from ``u0`` (zero by default).

    ``truth_sim(u, rng)`` returns the measured lifted output. Non-finite
    outputs give the trial an infinite NRMSE and the campaign carries on.
    With ``stop_below`` the campaign ends at the first trial whose NRMSE
    is below that value.
    """
    r = np.asarray(r, dtype=float)
    u = np.zeros_like(r) if u0 is None else np.asarray(u0, dtype=float).copy()
    logs: list[TrialLog] = []
    for trial in range(n_trials):
        rng = trial_rng(rng_seed, trial)
        notes = []
        with np.errstate(all="ignore"):
            if np.all(np.isfinite(u)):
                y = np.asarray(truth_sim(u, rng), dtype=float)
            else:
                y = np.full_like(r, np.nan)
            bad = ~np.isfinite(y)
            if np.any(bad):
                y = y.copy()
                y[int(np.argmax(bad)):] = np.nan
            e = r - y
        finite = bool(np.all(np.isfinite(y)))
        err_nrmse = nrmse(e, r) if finite else float("inf")
        peak = float(np.max(np.abs(e))) if finite else float("inf")
        diag: dict = {}
        u_next = u
        if trial < n_trials - 1 and finite and np.all(np.isfinite(u)):
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                L = learning_matrix(scheme, control_models, u, y, diag)
            for w in caught:
                if issubclass(w.category, (IllConditionedWarning, NonDifferentiablePointWarning)):
                    notes.append(str(w.message))
                else:
                    warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
            u_next = ilc_step(u, filtered_error(r, y, scheme.filters), L, scheme.filters)
        elif not finite:
            notes.append("non-finite output")
        logs.append(TrialLog(
            trial=trial, u=u.copy(), y=y, e=e, nrmse=err_nrmse, peak_error=peak,
            condition=diag.get("condition"),
            seeds={"seed": int(rng_seed), "trial": trial, "bit_generator": "Philox"},
            nonfinite=not finite, notes=tuple(notes),
        ))
        if progress is not None:
            progress(logs[-1])
        u = u_next
        if stop_below is not None and err_nrmse < stop_below:
            break
    return logs


@dataclass(frozen=True)
class ConvergenceMetrics:
    converged: bool
    l_star: int | None
    mean_transient_rate: float


def convergence_metrics(logs: Sequence, tolerance: float = DEFAULT_TOLERANCE) -> ConvergenceMetrics:
    """Convergence trial ``l_star`` and mean ratio of successive NRMSEs before it.

    ``logs`` may be :class:`TrialLog` objects or plain NRMSE values. Without
    convergence the rate is averaged over every trial.
    """
    vals = [float(getattr(x, "nrmse", x)) for x in logs]
    if len(vals) < 2:
        raise ValueError("at least two trials are needed")
    l_star = None
    for l in range(len(vals) - 1, -1, -1):
        if vals[l] < tolerance:
            l_star = l
        else:
            break
    end = l_star if l_star is not None and l_star >= 1 else len(vals) - 1
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = [vals[l] / vals[l - 1] for l in range(1, end + 1)]
    rate = float(np.mean(ratios)) if ratios else float("nan")
    return ConvergenceMetrics(converged=l_star is not None, l_star=l_star,
                              mean_transient_rate=rate)


def export_logs_csv(logs: Sequence[TrialLog], path) -> None:
    header = ["trial", "nrmse [1]", "peak_error [output units]", "condition [1]",
              "nonfinite", "seed"]
    rows = [[log.trial, log.nrmse, log.peak_error,
             "" if log.condition is None else log.condition,
             int(log.nonfinite), log.seeds.get("seed")] for log in logs]
    write_csv(path, header, rows)


def export_logs_jsonl(logs: Sequence[TrialLog], path) -> None:
    write_jsonl(path, (to_jsonable({
        "trial": log.trial, "nrmse": log.nrmse, "peak_error": log.peak_error,
        "condition": log.condition, "seeds": log.seeds, "nonfinite": log.nonfinite,
        "notes": list(log.notes), "u": log.u, "y": log.y, "e": log.e,
    }) for log in logs))
