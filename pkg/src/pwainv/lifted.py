"""Lifted trial maps, their Jacobians, and lifted filter matrices.

A lifted model maps the whole-trial input vector ``u = [u(0) .. u(N-mu)]``
to the shifted output vector ``y = [y(mu) .. y(N)]``; both have length
``N - mu + 1``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.signal

from . import ad
from .errors import DimensionMismatch, NonDifferentiablePointWarning, UnstableFilter
from .io import write_matrix_csv


@dataclass(frozen=True)
class LiftedModel:
    """A deterministic vector-to-vector trial map.

    ``fn`` must accept plain arrays and :class:`~pwainv.ad.Dual` vectors.
    ``probe``, when given, returns ``(output, boundary_contact)`` for a
    plain-array input and is used to flag non-differentiable points.
    """

    fn: Callable
    n_in: int
    n_out: int
    N: int | None = None
    mu: int = 0
    x0: np.ndarray | None = None
    probe: Callable | None = field(default=None, repr=False)
    name: str = ""

    def eval(self, u):
        if np.shape(ad.value(u))[0] != self.n_in:
            raise DimensionMismatch(
                f"lifted input has length {np.shape(ad.value(u))[0]}, expected {self.n_in}"
            )
        return self.fn(u)

    __call__ = eval


def build_lifted(sys, x0, N: int, mu: int, k0: int = 0) -> LiftedModel:
    """Lift ``sys`` over a trial of ``N + 1`` samples with output shift ``mu``.

    Inputs after time ``N - mu`` cannot reach the lifted outputs and are
    held at zero.
    """
    if mu < 1:
        raise ValueError("lifted models need mu >= 1")
    if N < mu:
        raise ValueError("horizon N must be at least mu")
    x0 = np.asarray(x0, dtype=float).reshape(sys.n_x)
    length = N - mu + 1

    def run(u):
        tail = np.zeros(mu)
        u_full = ad.concatenate([u, tail]) if ad.is_dual(u) else np.concatenate([u, tail])
        return sys.simulate(x0, u_full, k0).y[mu:]

    def fn(u):
        if not ad.is_dual(u):
            u = np.asarray(u, dtype=float)
        if np.shape(ad.value(u)) != (length,):
            raise DimensionMismatch(f"lifted input must have shape ({length},)")
        return run(u)

    direction = np.random.default_rng(0).standard_normal(length)

    def probe(u):
        """Output plus whether an input-dependent margin is exactly zero.

        Margins that sit on a hyperplane but cannot move with ``u`` (for
        example the fixed initial state) do not make the map one-sided.
        """
        u = np.asarray(u, dtype=float)
        u_full = np.concatenate([u, np.zeros(mu)])
        d_full = np.concatenate([direction, np.zeros(mu)])
        traj = sys.simulate(x0, ad.Dual(u_full, d_full[:, None]), k0)
        arr = sys.arrangement
        if arr.n_P == 0:
            return np.asarray(ad.value(traj.y))[mu:], False
        xv = np.asarray(ad.value(traj.x))[:-1]
        xd = ad.tangent(traj.x, 1).reshape(len(u_full) + 1, -1)[:-1]
        if arr.n_z == xv.shape[1]:
            zv, zd = xv, xd
        else:
            zv = np.hstack([xv, u_full.reshape(len(u_full), -1)])
            zd = np.hstack([xd, d_full.reshape(len(d_full), -1)])
        margins = zv @ arr.P.T - arr.beta
        moving = np.abs(zd @ arr.P.T) > 0.0
        return np.asarray(ad.value(traj.y))[mu:], bool(np.any((margins == 0.0) & moving))

    return LiftedModel(fn=fn, n_in=length, n_out=length, N=N, mu=mu, x0=x0,
                       probe=probe, name=getattr(sys, "name", ""))


@dataclass(frozen=True)
class JacobianInfo:
    boundary_contact: bool


def jacobian(model: LiftedModel, u, chunk: int | None = None, return_info: bool = False):
    """Exact Jacobian of ``model`` at ``u`` by forward-mode seeding.

    Selector functions are treated as piecewise constant. When the nominal
    trajectory touches a switching hyperplane a
    :class:`~pwainv.errors.NonDifferentiablePointWarning` is emitted.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (model.n_in,):
        raise DimensionMismatch(f"expected input of shape ({model.n_in},)")
    J = ad.jacobian(model.fn, u, chunk)
    contact = False
    if model.probe is not None:
        contact = bool(model.probe(u)[1])
        if contact:
            warnings.warn("trajectory touches a switching hyperplane; the Jacobian "
                          "is one-sided there", NonDifferentiablePointWarning, stacklevel=2)
    return (J, JacobianInfo(contact)) if return_info else J


def finite_difference_jacobian(model: LiftedModel, u, rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian with step ``rel_step * max(1, |u_j|)``."""
    u = np.asarray(u, dtype=float)
    cols = []
    for j in range(u.size):
        h = rel_step * max(1.0, abs(u[j]))
        up = u.copy()
        dn = u.copy()
        up[j] += h
        dn[j] -= h
        cols.append((np.asarray(model(up)) - np.asarray(model(dn))) / (2.0 * h))
    return np.stack(cols, axis=1)


def condition_number(J) -> float:
    """Ratio of extreme singular values from a full SVD."""
    s = np.linalg.svd(np.asarray(J, dtype=float), compute_uv=False)
    if s[-1] == 0.0:
        return float("inf")
    return float(s[0] / s[-1])


# -- filters ----------------------------------------------------------------------


@dataclass(frozen=True)
class LiftedFilterSet:
    """Zero-phase lowpass ``Q``, edge mask ``E`` and the causal Toeplitz ``F``."""

    Q: np.ndarray
    E: np.ndarray
    F_toeplitz: np.ndarray
    n_edge: int

    @property
    def length(self) -> int:
        return self.Q.shape[0]

    @classmethod
    def identity(cls, length: int) -> "LiftedFilterSet":
        eye = np.eye(length)
        return cls(Q=eye, E=eye, F_toeplitz=eye, n_edge=0)

    def export_csv(self, directory) -> None:
        from pathlib import Path

        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        write_matrix_csv(d / "filter_Q.csv", self.Q, unit="1")
        write_matrix_csv(d / "filter_E.csv", self.E, unit="1")
        write_matrix_csv(d / "filter_F.csv", self.F_toeplitz, unit="1")


def lowpass_impulse_response(a1: float, a2: float, b: float, length: int,
                              unit_dc: bool = True) -> np.ndarray:
    """Impulse response of ``b z (z + 1) / (z^2 + a1 z + a2)``.

    With ``unit_dc`` the response is scaled so the filter has unit DC gain.
    """
    roots = np.roots([1.0, a1, a2])
    if np.any(np.abs(roots) >= 1.0):
        raise UnstableFilter(f"lowpass poles {roots} are not strictly inside the unit circle")
    impulse = np.zeros(length)
    impulse[0] = 1.0
    h = scipy.signal.lfilter([b, b], [1.0, a1, a2], impulse)
    if unit_dc:
        h = h * (1.0 + a1 + a2) / (2.0 * b)
    return h


def build_filters(lp_a1: float, lp_a2: float, lp_b: float, length: int,
                  n_edge: int, unit_dc: bool = True) -> LiftedFilterSet:
    """Lifted forward-backward lowpass and edge-zeroing matrices."""
    if length < 2 * n_edge:
        raise ValueError("length must be at least 2 * n_edge")
    h = lowpass_impulse_response(lp_a1, lp_a2, lp_b, length, unit_dc)
    F = scipy.linalg.toeplitz(h, np.zeros(length))
    # flipping both axes turns the causal filter into its time reverse
    Q = F[::-1, ::-1] @ F
    mask = np.ones(length)
    if n_edge:
        mask[:n_edge] = 0.0
        mask[length - n_edge:] = 0.0
    return LiftedFilterSet(Q=Q, E=np.diag(mask), F_toeplitz=F, n_edge=n_edge)


def export_jacobian_csv(path, J) -> None:
    write_matrix_csv(path, J, unit="output per input")
