"""Stable inversion of nonlinear inverse dynamics by truncated Picard iteration.

The user supplies the inverse dynamics in normal form,

    eta(k+1) = f_eta(eta(k), yp(k), k),      u(k) = f_mu_inv(eta(k), yp(k), k),

where ``yp(k) = [y(k), ..., y(k+mu)]`` is the output preview. Around the
linear part ``A`` (split by ``V`` into stable and unstable blocks) the bounded
solution is a fixed point of a sum over the split propagator ``phi``; each
Picard iteration evaluates that sum once over the finite horizon.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.optimize

from . import ad
from .errors import Divergence
from .lifted import LiftedModel
from .stable_inversion import EPS_UNIT, modal_split

DIVERGENCE_RATIO = 10.0


def phi(k: int, A_tilde_s, A_tilde_u) -> np.ndarray:
    """Split propagator: causal stable part for ``k >= 0``, anticausal unstable part otherwise."""
    A_s = np.atleast_2d(np.asarray(A_tilde_s, dtype=float)) if np.size(A_tilde_s) else np.zeros((0, 0))
    A_u = np.atleast_2d(np.asarray(A_tilde_u, dtype=float)) if np.size(A_tilde_u) else np.zeros((0, 0))
    n_s, n_u = A_s.shape[0], A_u.shape[0]
    if k > 0:
        return scipy.linalg.block_diag(np.linalg.matrix_power(A_s, k), np.zeros((n_u, n_u)))
    if k == 0:
        return scipy.linalg.block_diag(np.eye(n_s), np.zeros((n_u, n_u)))
    return scipy.linalg.block_diag(np.zeros((n_s, n_s)), -np.linalg.matrix_power(A_u, k))


def phi_norm(A_tilde_s, A_tilde_u, horizon: int = 2000) -> float:
    """``sum_k ||phi(k)||_inf`` truncated to ``|k| <= horizon``."""
    return float(sum(np.linalg.norm(phi(k, A_tilde_s, A_tilde_u), np.inf)
                     for k in range(-horizon, horizon + 1)))


@dataclass(frozen=True)
class InverseDynamics:
    """Normal-form inverse dynamics with a stable/unstable split of their linear part.

    ``V`` maps decoupled coordinates to original ones: ``eta = V eta_tilde``
    and ``A_tilde = V^-1 A V``.
    """

    f_eta: Callable
    f_mu_inv: Callable
    A: np.ndarray
    V: np.ndarray
    V_inv: np.ndarray
    n_s: int
    mu: int
    y_dagger: float = 0.0

    @property
    def n_eta(self) -> int:
        return self.A.shape[0]

    @property
    def A_tilde(self) -> np.ndarray:
        return self.V_inv @ self.A @ self.V

    @property
    def A_tilde_s(self) -> np.ndarray:
        return self.A_tilde[:self.n_s, :self.n_s]

    @property
    def A_tilde_u(self) -> np.ndarray:
        return self.A_tilde[self.n_s:, self.n_s:]

    def f_tilde(self, eta_t, yp, k):
        return self.V_inv @ self.f_eta(self.V @ eta_t, yp, k)

    @classmethod
    def from_callables(cls, f_eta: Callable, f_mu_inv: Callable, n_eta: int, mu: int,
                       y_dagger: float | None = None,
                       eps_unit: float = EPS_UNIT) -> "InverseDynamics":
        """Linearize ``f_eta`` at ``eta = 0`` and a constant preview ``y_dagger``.

        When ``y_dagger`` is omitted it is solved so that ``f_eta(0, y_dagger) = 0``
        in the least-squares sense.
        """
        if y_dagger is None:
            y_dagger = solve_y_dagger(f_eta, n_eta, mu)
        yp = np.full(mu + 1, float(y_dagger))
        A = ad.jacobian(lambda e: f_eta(e, yp, 0), np.zeros(n_eta))
        split = modal_split(A, eps_unit)
        return cls(f_eta=f_eta, f_mu_inv=f_mu_inv, A=A, V=split.V_inv, V_inv=split.V,
                   n_s=split.n_s, mu=mu, y_dagger=float(y_dagger))


def solve_y_dagger(f_eta: Callable, n_eta: int, mu: int) -> float:
    """Constant preview level at which the origin is an equilibrium."""
    def resid(c):
        return np.asarray(ad.value(f_eta(np.zeros(n_eta), np.full(mu + 1, c[0]), 0)), float)

    if np.allclose(resid([0.0]), 0.0):
        return 0.0
    sol = scipy.optimize.least_squares(resid, x0=[0.0])
    return float(sol.x[0])


@dataclass(frozen=True)
class PicardState:
    m: int
    eta: list  # eta_tilde(k) for k = 0 .. N - mu, plain arrays or Duals
    delta_norms: tuple = ()
    n_evals: int = 0

    def values(self) -> np.ndarray:
        return np.array([np.asarray(ad.value(e), dtype=float) for e in self.eta])


def zero_iterate(length: int, n_eta: int) -> PicardState:
    return PicardState(m=0, eta=[np.zeros(n_eta) for _ in range(length)])


def initial_iterate_feedback_only(forward_model: Callable, x0, N: int, mu: int,
                                  V_inv) -> PicardState:
    """Iterate zero from the zero-feedforward simulation of the normal form.

    ``forward_model(x, u, k)`` returns the next normal-form state whose last
    ``n_eta`` entries are the internal dynamics; ``V_inv`` maps them to
    decoupled coordinates.
    """
    x = np.asarray(x0, dtype=float)
    V_inv = np.asarray(V_inv, dtype=float)
    etas = []
    for k in range(N - mu + 1):
        etas.append(V_inv @ x[mu:])
        x = np.asarray(forward_model(x, 0.0, k), dtype=float)
    etas[0] = np.zeros_like(etas[0])
    return PicardState(m=0, eta=etas)


def preview_windows(y_hat, mu: int):
    """``[y(k) .. y(k+mu)]`` for ``k = 0 .. N - mu`` from the shifted outputs."""
    pad = np.zeros(mu)
    y_full = ad.concatenate([pad, y_hat]) if ad.is_dual(y_hat) else np.concatenate(
        [pad, np.asarray(y_hat, dtype=float)])
    return [y_full[k:k + mu + 1] for k in range(len(y_hat))]


def _sup_sum(new, old) -> float:
    return float(sum(np.max(np.abs(np.asarray(ad.value(a), float) - np.asarray(ad.value(b), float)),
                            initial=0.0) for a, b in zip(new, old)))


def picard_iterate(state: PicardState, dyn: InverseDynamics, y_hat, m_final: int = 1,
                   divergence_ratio: float = DIVERGENCE_RATIO) -> PicardState:
    """Apply ``m_final`` truncated Picard iterations.

    The propagator sum is evaluated by its equivalent pair of recursions: the
    stable block runs forward from ``k = 0`` and the unstable block runs
    backward from the step after the horizon, both starting at zero. The
    initial value ``eta_tilde(0)`` stays pinned at zero.
    """
    windows = preview_windows(y_hat, dyn.mu)
    L = len(windows)
    n_s = dyn.n_s
    A_t = dyn.A_tilde
    A_s, A_u = A_t[:n_s, :n_s], A_t[n_s:, n_s:]
    A_u_inv = np.linalg.inv(A_u) if A_u.size else A_u
    eta = list(state.eta)
    norms = list(state.delta_norms)
    evals = state.n_evals
    for _ in range(m_final):
        # w[l] for l = 1..L uses the iterate at l - 1
        w = [None] + [dyn.f_tilde(eta[l - 1], windows[l - 1], l - 1) - A_t @ eta[l - 1]
                      for l in range(1, L + 1)]
        evals += L
        s = [None] * L
        s[0] = np.zeros(n_s)
        for k in range(1, L):
            s[k] = A_s @ s[k - 1] + w[k][:n_s]
        u_next = np.zeros(A_u.shape[0])
        un = [None] * L
        for k in range(L - 1, 0, -1):
            u_next = A_u_inv @ (u_next - w[k + 1][n_s:])
            un[k] = u_next
        new = [np.zeros(dyn.n_eta)] + [ad.concatenate([s[k], un[k]]) for k in range(1, L)]
        norms.append(_sup_sum(new, eta))
        if len(norms) >= 2 and norms[-2] > 0 and norms[-1] > divergence_ratio * norms[-2]:
            raise Divergence(f"Picard update grew from {norms[-2]:.3e} to {norms[-1]:.3e}")
        eta = new
    return PicardState(m=state.m + m_final, eta=eta, delta_norms=tuple(norms), n_evals=evals)


def assemble_lifted_inverse(dyn: InverseDynamics, m_final: int, N: int, mu: int | None = None,
                            initial: PicardState | None = None) -> LiftedModel:
    """Lifted inverse ``y[mu..N] -> u[0..N-mu]`` built on ``m_final`` Picard iterations.

    Element ``k`` is ``f_mu_inv(V eta_tilde(k), yp(k), k)``. Without an
    explicit ``initial`` iterate the zero trajectory is used.
    """
    if m_final < 1:
        raise ValueError("m_final must be at least 1")
    mu = dyn.mu if mu is None else mu
    length = N - mu + 1
    start = initial or zero_iterate(length, dyn.n_eta)
    if len(start.eta) != length:
        raise ValueError("initial iterate length does not match the horizon")

    def fn(y_hat):
        state = picard_iterate(start, dyn, y_hat, m_final)
        windows = preview_windows(y_hat, mu)
        return ad.stack([dyn.f_mu_inv(dyn.V @ state.eta[k], windows[k], k)
                         for k in range(length)])

    return LiftedModel(fn=fn, n_in=length, n_out=length, N=N, mu=mu, name="picard-inverse")
