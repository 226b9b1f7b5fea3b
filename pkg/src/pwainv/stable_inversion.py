"""Stable inversion of PWA systems with unstable inverse dynamics.

The inverse state is split by one similarity transform ``V`` into stable
coordinates, integrated forward from zero, and unstable coordinates,
integrated backward from zero at the end of the horizon. Switching must
depend on only one of the two groups.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from . import ad
from .errors import (
    DecouplingFailed,
    EigenvalueOnUnitCircle,
    NoPredecessor,
    SwitchingClassMismatch,
)
from .inversion import InversePwaSystem
from .io import write_csv
from .lifted import LiftedModel

EPS_UNIT = 1e-6
DECOUPLE_RTOL = 1e-9
SWITCHING_RTOL = 1e-10


class PaddingWarning(UserWarning):
    """The reference has fewer zero pads than the modes need to settle."""


class SwitchingClass(str, enum.Enum):
    STABLE = "stable-mode"
    UNSTABLE = "unstable-mode"
    MIXED = "mixed"
    NONE = "none"  # switching independent of both groups (e.g. one location)


@dataclass(frozen=True)
class ModalSplit:
    """``V A V^-1 = blkdiag(A_s, A_u)`` with the stable block first."""

    V: np.ndarray
    V_inv: np.ndarray
    n_s: int
    eigenvalues: np.ndarray


def modal_split(A, eps_unit: float = EPS_UNIT) -> ModalSplit:
    """Block-diagonalize ``A`` into stable and unstable parts.

    An ordered real Schur form puts the eigenvalues inside the unit circle
    first; a Sylvester solve then removes the coupling block.
    """
    A = np.asarray(A, dtype=float)
    eig = np.linalg.eigvals(A)
    near = np.abs(np.abs(eig) - 1.0) <= eps_unit
    if np.any(near):
        raise EigenvalueOnUnitCircle(
            f"eigenvalues {eig[near]} lie within {eps_unit} of the unit circle")
    T, Z, n_s = scipy.linalg.schur(A, output="real", sort=lambda re, im: re * re + im * im < 1.0)
    n = A.shape[0]
    X = np.zeros((n_s, n - n_s))
    if 0 < n_s < n:
        X = scipy.linalg.solve_sylvester(T[:n_s, :n_s], -T[n_s:, n_s:], -T[:n_s, n_s:])
    W = np.eye(n)
    W[:n_s, n_s:] = X
    W_inv = np.eye(n)
    W_inv[:n_s, n_s:] = -X
    V_inv = Z @ W
    V = W_inv @ Z.T
    return ModalSplit(V=V, V_inv=V_inv, n_s=int(n_s), eigenvalues=eig)


@dataclass(frozen=True)
class DecoupledBlocks:
    A_s: np.ndarray
    A_u: np.ndarray
    A_u_inv: np.ndarray
    B_s: np.ndarray
    B_u: np.ndarray
    F_s: np.ndarray
    F_u: np.ndarray
    C_bar: np.ndarray
    D_bar: np.ndarray
    G_bar: np.ndarray


@dataclass(frozen=True)
class DecoupledInverse:
    """An explicit inverse expressed in decoupled modal coordinates.

    ``x_tilde = V x``; the first ``n_s`` coordinates are stable modes.
    """

    inverse: InversePwaSystem
    V: np.ndarray
    V_inv: np.ndarray
    n_s: int
    n_u_modes: int
    P_tilde: np.ndarray
    switching_class: SwitchingClass
    eigenvalues: np.ndarray
    ref_location: int
    offdiag_residuals: dict
    eps_unit: float = EPS_UNIT
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def preview(self) -> int:
        return self.inverse.preview

    @property
    def arrangement(self):
        return self.inverse.system.arrangement

    def blocks(self, q: int, k: int = 0) -> DecoupledBlocks:
        loc = self.inverse.system.locations[q]
        key = (q, 0 if loc.is_time_invariant else k)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        Abar, Bbar, Fbar, Cbar, Dbar, Gbar = loc.at(k)
        n_s = self.n_s
        At = self.V @ Abar @ self.V_inv
        Bt = self.V @ Bbar[:, 0]
        Ft = self.V @ Fbar
        A_u = At[n_s:, n_s:]
        blk = DecoupledBlocks(
            A_s=At[:n_s, :n_s], A_u=A_u,
            A_u_inv=np.linalg.inv(A_u) if A_u.size else A_u,
            B_s=Bt[:n_s], B_u=Bt[n_s:], F_s=Ft[:n_s], F_u=Ft[n_s:],
            C_bar=Cbar[0], D_bar=float(Dbar[0, 0]), G_bar=float(Gbar[0]),
        )
        if len(self._cache) < 4096:
            self._cache[key] = blk
        return blk

    def to_dict(self) -> dict:
        return {
            "n_s": self.n_s,
            "n_u": self.n_u_modes,
            "switching_class": self.switching_class.value,
            "eigenvalues": [[float(e.real), float(e.imag)] for e in self.eigenvalues],
            "ref_location": self.ref_location,
            "offdiag_residuals": {str(k): float(v) for k, v in self.offdiag_residuals.items()},
        }


def classify_switching(P_tilde, n_s: int, rtol: float = SWITCHING_RTOL,
                       scale: float = 1.0) -> SwitchingClass:
    if P_tilde.shape[0] == 0:
        return SwitchingClass.NONE
    tol = rtol * scale
    on_stable = np.any(np.abs(P_tilde[:, :n_s]) > tol)
    on_unstable = np.any(np.abs(P_tilde[:, n_s:]) > tol)
    if on_stable and on_unstable:
        return SwitchingClass.MIXED
    if on_unstable:
        return SwitchingClass.UNSTABLE
    if on_stable:
        return SwitchingClass.STABLE
    return SwitchingClass.NONE


def decouple(inv: InversePwaSystem, ref_location: int = 0, eps_unit: float = EPS_UNIT,
             times: Sequence[int] = (0,), rtol: float = DECOUPLE_RTOL) -> DecoupledInverse:
    """Shared modal transform from one location, validated on all locations."""
    sys = inv.system
    split = modal_split(sys.locations[ref_location].A(times[0]), eps_unit)
    V, V_inv, n_s = split.V, split.V_inv, split.n_s
    residuals = {}
    for q, loc in enumerate(sys.locations):
        if not sys.signatures.codes(q):
            continue  # a composite location that can never be active
        worst = 0.0
        for k in times:
            Abar = loc.A(k)
            M = V @ Abar @ V_inv
            scale = max(np.linalg.norm(Abar), np.finfo(float).tiny)
            off = max(np.linalg.norm(M[:n_s, n_s:]) if n_s < M.shape[0] else 0.0,
                      np.linalg.norm(M[n_s:, :n_s]) if n_s else 0.0) / scale
            worst = max(worst, off)
            if off > rtol:
                raise DecouplingFailed(q, off)
            eig_s = np.linalg.eigvals(M[:n_s, :n_s]) if n_s else np.zeros(0)
            eig_u = np.linalg.eigvals(M[n_s:, n_s:]) if n_s < M.shape[0] else np.zeros(0)
            if np.any(np.abs(eig_s) >= 1.0 - eps_unit) or np.any(np.abs(eig_u) <= 1.0 + eps_unit):
                raise DecouplingFailed(q, off)
        residuals[q] = worst
    P = sys.arrangement.P
    P_tilde = P @ V_inv
    scale = max(np.linalg.norm(P, axis=1).max(initial=0.0), 1e-300) * np.linalg.norm(V_inv)
    cls = classify_switching(P_tilde, n_s, scale=scale)
    if cls is not SwitchingClass.NONE and P_tilde.shape[0]:
        # snap numerically-zero columns so localization sees only one group
        P_tilde = P_tilde.copy()
        tol = SWITCHING_RTOL * scale
        P_tilde[np.abs(P_tilde) <= tol] = 0.0
    return DecoupledInverse(
        inverse=inv, V=V, V_inv=V_inv, n_s=n_s, n_u_modes=V.shape[0] - n_s,
        P_tilde=P_tilde, switching_class=cls, eigenvalues=split.eigenvalues,
        ref_location=ref_location, offdiag_residuals=residuals, eps_unit=eps_unit,
    )


# -- solutions ------------------------------------------------------------------------


@dataclass(frozen=True)
class StableInversionSolution:
    u: np.ndarray
    x_traj: np.ndarray
    xs_traj: np.ndarray
    xu_traj: np.ndarray
    delta_traj: np.ndarray
    locations: np.ndarray
    boundary_residuals: dict

    def export_csv(self, path) -> None:
        u = ad.value(self.u)
        xs = ad.value(self.xs_traj)
        xu = ad.value(self.xu_traj)
        header = (["k", "u [input units]", "delta"]
                  + [f"xs{i} [state units]" for i in range(xs.shape[1])]
                  + [f"xu{i} [state units]" for i in range(xu.shape[1])])
        rows = []
        for k in range(len(u)):
            bits = "".join(str(int(b)) for b in self.delta_traj[k])
            rows.append([k, float(u[k]), bits, *map(float, xs[k]), *map(float, xu[k])])
        write_csv(path, header, rows)


def _zero_run(values, from_end: bool) -> int:
    v = np.abs(np.asarray(values, dtype=float))
    if from_end:
        v = v[::-1]
    nz = np.flatnonzero(v)
    return int(nz[0]) if nz.size else v.size


def settling_samples(eigenvalues, tol: float = 1e-8) -> tuple[int, int]:
    """Samples for the slowest stable and unstable modes to decay to ``tol``."""
    mags = np.abs(np.asarray(eigenvalues))
    stable = mags[mags < 1.0]
    unstable = mags[mags > 1.0]
    lead = 0
    trail = 0
    if stable.size and stable.max() > 0.0:
        lead = math.ceil(math.log(tol) / math.log(stable.max()))
    if unstable.size:
        trail = math.ceil(math.log(tol) / -math.log(unstable.min()))
    return lead, trail


def _check_padding(dec: DecoupledInverse, r):
    lead, trail = settling_samples(dec.eigenvalues)
    have_lead = _zero_run(r, False)
    have_trail = _zero_run(r, True)
    if have_lead < trail or have_trail < lead:
        warnings.warn(
            f"reference has {have_lead} leading and {have_trail} trailing zeros; the "
            f"inverse modes need about {trail} and {lead}", PaddingWarning, stacklevel=3)


def _localize_modes(dec: DecoupledInverse, P_part, z):
    delta = (P_part @ np.asarray(ad.value(z), dtype=float) - dec.arrangement.beta >= 0.0)
    delta = delta.astype(np.int8)
    return delta, dec.inverse.system.signatures.lookup(delta)


def _assemble(dec, xs, xu, r, locs, k0):
    u, xs_full = [], []
    for k in range(len(locs)):
        blk = dec.blocks(locs[k], k0 + k)
        x = dec.V_inv @ ad.concatenate([xs[k], xu[k]])
        xs_full.append(x)
        u.append(blk.C_bar @ x + blk.D_bar * r[k] + blk.G_bar)
    return ad.stack(u), ad.stack(xs_full)


def stable_invert_stable_switching(dec: DecoupledInverse, r, k0: int = 0,
                                   warn_padding: bool = True) -> StableInversionSolution:
    """Forward stable pass with state-driven switching, then backward unstable pass.

    ``r[k]`` is the desired output ``y[k0 + k + preview]``. Works on plain
    arrays and on :class:`~pwainv.ad.Dual` references.
    """
    if dec.switching_class not in (SwitchingClass.STABLE, SwitchingClass.NONE):
        raise SwitchingClassMismatch(
            f"switching class is {dec.switching_class.value}, expected stable-mode")
    if not ad.is_dual(r):
        r = np.asarray(r, dtype=float)
        if warn_padding:
            _check_padding(dec, r)
    L = len(r)
    n_s, n_u = dec.n_s, dec.n_u_modes
    P_s = dec.P_tilde[:, :n_s]

    xs = [np.zeros(n_s)]
    locs, deltas = [], []
    for k in range(L):
        delta, q = _localize_modes(dec, P_s, xs[k])
        locs.append(q)
        deltas.append(delta)
        if k < L - 1:
            blk = dec.blocks(q, k0 + k)
            xs.append(blk.A_s @ xs[k] + blk.B_s * r[k] + blk.F_s)

    xu = [None] * L
    xu[L - 1] = np.zeros(n_u)
    for k in range(L - 2, -1, -1):
        blk = dec.blocks(locs[k], k0 + k)
        xu[k] = blk.A_u_inv @ (xu[k + 1] - blk.B_u * r[k] - blk.F_u)

    u, x = _assemble(dec, xs, xu, r, locs, k0)
    return StableInversionSolution(
        u=u, x_traj=x, xs_traj=ad.stack(xs), xu_traj=ad.stack(xu),
        delta_traj=np.array(deltas, dtype=np.int8).reshape(L, -1),
        locations=np.array(locs), boundary_residuals=_residuals(xs, xu),
    )


def _residuals(xs, xu) -> dict:
    def nrm(v):
        v = np.asarray(ad.value(v), dtype=float)
        return float(np.max(np.abs(v))) if v.size else 0.0

    return {"xs_start": nrm(xs[0]), "xu_end": nrm(xu[-1]),
            "xu_start": nrm(xu[0]), "xs_end": nrm(xs[-1])}


def default_selector_cost(xu_next, candidate) -> float:
    return float(np.linalg.norm(np.asarray(xu_next) - np.asarray(candidate)))


def stable_invert_unstable_switching(
    dec: DecoupledInverse, r, selector_cost: Callable | None = None, k0: int = 0,
    warn_padding: bool = True,
) -> StableInversionSolution:
    """Backward unstable pass with per-location predecessor search.

    At each step every location proposes the predecessor its own dynamics
    imply; a proposal survives only if it localizes to that location. Among
    survivors the lowest ``selector_cost`` wins, ties going to the lower
    location index.
    """
    if dec.switching_class not in (SwitchingClass.UNSTABLE, SwitchingClass.NONE):
        raise SwitchingClassMismatch(
            f"switching class is {dec.switching_class.value}, expected unstable-mode")
    cost = selector_cost or default_selector_cost
    r = np.asarray(r, dtype=float)
    if warn_padding:
        _check_padding(dec, r)
    L = len(r)
    n_s, n_u = dec.n_s, dec.n_u_modes
    P_u = dec.P_tilde[:, n_s:]
    sigs = dec.inverse.system.signatures
    active = [q for q in range(dec.inverse.system.n_locations) if sigs.codes(q)]

    xu = [None] * L
    xu[L - 1] = np.zeros(n_u)
    locs = [0] * L
    deltas = [None] * L
    deltas[L - 1], locs[L - 1] = _localize_modes(dec, P_u, xu[L - 1])
    for k in range(L - 2, -1, -1):
        best = None
        for q in active:
            blk = dec.blocks(q, k0 + k)
            cand = blk.A_u_inv @ (xu[k + 1] - blk.B_u * r[k] - blk.F_u)
            delta = (P_u @ cand - dec.arrangement.beta >= 0.0).astype(np.int8)
            if not sigs.claims(q, delta):
                continue
            c = cost(xu[k + 1], cand)
            if best is None or c < best[0]:
                best = (c, q, cand, delta)
        if best is None:
            raise NoPredecessor(k0 + k)
        _, locs[k], xu[k], deltas[k] = best

    xs = [np.zeros(n_s)]
    for k in range(L - 1):
        blk = dec.blocks(locs[k], k0 + k)
        xs.append(blk.A_s @ xs[k] + blk.B_s * r[k] + blk.F_s)

    u, x = _assemble(dec, xs, xu, r, locs, k0)
    return StableInversionSolution(
        u=u, x_traj=x, xs_traj=np.array(xs).reshape(L, n_s),
        xu_traj=np.array(xu).reshape(L, n_u),
        delta_traj=np.array(deltas, dtype=np.int8).reshape(L, -1),
        locations=np.array(locs), boundary_residuals=_residuals(xs, xu),
    )


def lifted_stable_inverse(dec: DecoupledInverse, N: int, mu_hat: int | None = None,
                          k0: int = 0) -> LiftedModel:
    """The lifted inverse map from desired outputs ``y[mu..N]`` to inputs ``u[0..N-mu]``."""
    if dec.switching_class not in (SwitchingClass.STABLE, SwitchingClass.NONE):
        raise SwitchingClassMismatch("the lifted inverse needs stable-mode switching")
    mu = dec.preview if mu_hat is None else mu_hat
    length = N - mu + 1
    P_s = dec.P_tilde[:, :dec.n_s]

    def fn(y):
        return stable_invert_stable_switching(dec, y, k0=k0, warn_padding=False).u

    def probe(y):
        """Inverse plus whether a margin that moves with ``y`` is exactly zero."""
        y = np.asarray(y, dtype=float)
        direction = np.random.default_rng(0).standard_normal(len(y))
        sol = stable_invert_stable_switching(dec, ad.Dual(y, direction[:, None]), k0=k0,
                                             warn_padding=False)
        xs = sol.xs_traj
        margins = np.asarray(ad.value(xs)) @ P_s.T - dec.arrangement.beta
        moving = np.abs(ad.tangent(xs, 1).reshape(len(y), -1) @ P_s.T) > 0.0
        return np.asarray(ad.value(sol.u)), bool(np.any((margins == 0.0) & moving))

    return LiftedModel(fn=fn, n_in=length, n_out=length, N=N, mu=mu, probe=probe,
                       name="stable-inverse")
