"""Relative-degree analysis and conventional inversion of SISO PWA systems.

The inverse of a system with global relative degree ``mu_hat`` is again a
PWA system. It consumes the future output ``y[k + mu_hat]`` as its input and
produces ``u[k]``:

    x[k+1] = Abar x[k] + Bbar y[k+mu_hat] + Fbar
    u[k]   = Cbar x[k] + Dbar y[k+mu_hat] + Gbar
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    AssumptionViolated,
    DimensionMismatch,
    SequenceUnresolvable,
    SingularCB,
    SingularCoefficient,
    Undetermined,
    ZeroFeedthrough,
)
from .pwa import (
    HyperplaneArrangement,
    Location,
    PwaSystem,
    Schedule,
    enumerate_signatures,
)

NONZERO_RTOL = 1e-12
MAX_LOCATIONS_ENUMERATED = 8


def _norm(M) -> float:
    return float(np.linalg.norm(np.atleast_1d(M)))


def is_nonzero(coef, *operands) -> bool:
    """Scale-relative nonzero test ``|coef| > 1e-12 * prod(||operand||)``."""
    scale = 1.0
    for op in operands:
        scale *= max(_norm(op), np.finfo(float).tiny)
    return bool(np.max(np.abs(coef)) > NONZERO_RTOL * scale)


def _require_siso(sys: PwaSystem):
    if not (sys.n_u == 1 and sys.n_y == 1):
        raise AssumptionViolated("A5.2", "inversion requires a single-input single-output system")


# -- relative degree ----------------------------------------------------------------


def _markov_coefficient(sys: PwaSystem, seq: Sequence[int], k: int):
    """Input coefficient of ``y[k+m]`` on ``u[k]`` along locations ``seq``.

    ``seq = (q_0, ..., q_m)``; returns the coefficient and its operand list.
    """
    m = len(seq) - 1
    if m == 0:
        D = sys.locations[seq[0]].D(k)
        return D, [D]
    B = sys.locations[seq[0]].B(k)
    coef = B
    ops = [B]
    for j in range(1, m):
        A = sys.locations[seq[j]].A(k + j)
        coef = A @ coef
        ops.append(A)
    C = sys.locations[seq[m]].C(k + m)
    ops.append(C)
    return C @ coef, ops


def component_relative_degrees(sys: PwaSystem, times: Sequence[int] = (0,),
                               cap: int = 8) -> list[int | None]:
    """Relative degree of each location's own affine model.

    ``None`` marks a location whose relative degree exceeds ``cap``.
    """
    _require_siso(sys)
    out: list[int | None] = []
    for q in range(sys.n_locations):
        found = None
        for m in range(cap + 1):
            seq = (q,) * (m + 1)
            if all(is_nonzero(*_split(_markov_coefficient(sys, seq, k))) for k in times):
                found = m
                break
        out.append(found)
    return out


def _split(pair):
    coef, ops = pair
    return (coef, *ops)


@dataclass(frozen=True)
class RelativeDegreeReport:
    """Outcome of the global relative-degree search.

    ``zero_sequences[m]`` holds, for every preview ``m < mu_hat``, a location
    sequence whose input coefficient vanishes; ``witness`` is a sequence at
    ``mu_hat`` with the smallest nonzero coefficient.
    """

    mu_hat: int
    mu_c: int | str | None
    mu_components: tuple
    witness: tuple[int, ...]
    zero_sequences: dict
    coefficients: dict = field(repr=False)
    lemma_consistent: dict = field(default_factory=dict)
    conservative: bool = True
    assumed: tuple[str, ...] = ("A5.1",)

    def to_dict(self) -> dict:
        return {
            "mu_hat": self.mu_hat,
            "mu_c": self.mu_c,
            "mu_components": list(self.mu_components),
            "witness": list(self.witness),
            "zero_sequences": {str(m): list(s) for m, s in self.zero_sequences.items()},
            "coefficients": {
                str(m): {"-".join(map(str, s)): float(v) for s, v in tab.items()}
                for m, tab in self.coefficients.items()
            },
            "lemma_consistent": self.lemma_consistent,
            "conservative": self.conservative,
            "assumed": list(self.assumed),
        }


def outputs_location_independent(sys: PwaSystem, times: Sequence[int] = (0,),
                                 rtol: float = 1e-12) -> bool:
    """Whether C, D and G agree across locations at the sampled times."""
    for k in times:
        ref = sys.locations[0]
        for loc in sys.locations[1:]:
            for name in "CDG":
                a, b = getattr(ref, name)(k), getattr(loc, name)(k)
                if not np.allclose(a, b, rtol=rtol, atol=rtol * max(_norm(a), 1e-300)):
                    return False
    return True


def detect_global_relative_degree(sys: PwaSystem, max_mu: int = 4,
                                  times: Sequence[int] = (0,)) -> RelativeDegreeReport:
    """Least preview ``m`` whose input coefficient is nonzero on every sequence.

    All ``|Q|**(m+1)`` location sequences are enumerated, reachable or not,
    so the answer is conservative.
    """
    _require_siso(sys)
    n_q = sys.n_locations
    if n_q > MAX_LOCATIONS_ENUMERATED:
        raise ValueError(f"enumeration is limited to {MAX_LOCATIONS_ENUMERATED} locations")
    coefficients: dict[int, dict] = {}
    zero_sequences: dict[int, tuple] = {}
    mu_hat = None
    witness = ()
    for m in range(max_mu + 1):
        table = {}
        all_nonzero = True
        smallest = (np.inf, ())
        for seq in itertools.product(range(n_q), repeat=m + 1):
            for k in times:
                coef, ops = _markov_coefficient(sys, seq, k)
                val = float(np.ravel(coef)[0])
                table[seq] = val if k == times[0] else table[seq]
                if not is_nonzero(coef, *ops):
                    all_nonzero = False
                    zero_sequences.setdefault(m, seq)
                elif abs(val) < smallest[0]:
                    smallest = (abs(val), seq)
        coefficients[m] = table
        if all_nonzero:
            mu_hat = m
            witness = smallest[1]
            break
    if mu_hat is None:
        raise Undetermined(max_mu)

    comps = component_relative_degrees(sys, times, cap=max(max_mu, 1) + 4)
    mu_c = comps[0] if len(set(comps)) == 1 else "mixed"
    lemma = {"mu_c=0 <=> mu_hat=0": (mu_c == 0) == (mu_hat == 0)}
    if outputs_location_independent(sys, times):
        lemma["mu_c=1 <=> mu_hat=1"] = (mu_c == 1) == (mu_hat == 1)
    return RelativeDegreeReport(
        mu_hat=mu_hat, mu_c=mu_c, mu_components=tuple(comps), witness=witness,
        zero_sequences=zero_sequences, coefficients=coefficients,
        lemma_consistent=lemma,
    )


# -- output preview ----------------------------------------------------------------


@dataclass(frozen=True)
class PreviewCoefficients:
    """``y[k+mu] = C_cal x[k] + D_cal u[k] + G_cal + Psi`` along ``locations``."""

    C_cal: np.ndarray
    D_cal: float
    G_cal: float
    Psi: float
    locations: tuple[int, ...]

    def predict(self, x, u) -> float:
        return float(self.C_cal @ np.asarray(x, float) + self.D_cal * u + self.G_cal + self.Psi)


def _resolve_sequence(sys: PwaSystem, x_k, k: int, mu: int, inputs):
    if len(inputs) < mu:
        raise SequenceUnresolvable(
            f"preview {mu} needs {mu} inputs to resolve the switching sequence, got {len(inputs)}"
        )
    x = np.asarray(x_k, dtype=float)
    locs = []
    for j in range(mu):
        _, q = sys.localize(x)
        locs.append(q)
        x, _ = sys.step(x, inputs[j], k + j)
    _, q = sys.localize(x)
    locs.append(q)
    return tuple(locs)


def output_preview_coeffs(sys: PwaSystem, x_k, k: int, mu_hat: int,
                          future_inputs: Sequence[float]) -> PreviewCoefficients:
    """Coefficients of the ``mu_hat``-step output preview.

    ``future_inputs`` lists ``u[k], u[k+1], ...``; the first ``mu_hat``
    entries fix the switching sequence. Products are ordered with the
    latest time on the left; an empty product is the identity and an empty
    sum is zero.
    """
    _require_siso(sys)
    u = [float(v) for v in future_inputs]
    locs = _resolve_sequence(sys, x_k, k, mu_hat, u)
    mats = [sys.locations[q].at(k + j) for j, q in enumerate(locs)]
    n = sys.n_x
    A = [m[0] for m in mats]
    B = [m[1] for m in mats]
    F = [m[2] for m in mats]
    C_end, D_end, G_end = mats[mu_hat][3], mats[mu_hat][4], mats[mu_hat][5]

    def prod(lo: int, hi: int) -> np.ndarray:
        """A[hi-1] ... A[lo], identity when empty."""
        out = np.eye(n)
        for j in range(lo, hi):
            out = A[j] @ out
        return out

    C_cal = C_end @ prod(0, mu_hat)
    if mu_hat == 0:
        D_cal = D_end
    else:
        D_cal = C_end @ prod(1, mu_hat) @ B[0]
    G_cal = G_end + sum((C_end @ prod(s + 1, mu_hat) @ F[s] for s in range(mu_hat)),
                        np.zeros(1))
    Psi = sum((C_end @ prod(s + 1, mu_hat) @ B[s] * u[s] for s in range(1, mu_hat)),
              np.zeros(1))
    if mu_hat > 0 and np.any(D_end != 0.0):
        if len(u) <= mu_hat:
            raise SequenceUnresolvable("direct feedthrough at the preview time needs its input")
        Psi = Psi + D_end[:, 0] * u[mu_hat]
    return PreviewCoefficients(
        C_cal=np.asarray(C_cal).reshape(n),
        D_cal=float(np.ravel(D_cal)[0]),
        G_cal=float(np.ravel(G_cal)[0]),
        Psi=float(np.ravel(Psi)[0]),
        locations=locs,
    )


def implicit_inverse_residual(sys: PwaSystem, x_k, k: int, u_candidate: float,
                              future_u: Sequence[float], y_target: float,
                              mu_hat: int | None = None) -> float:
    """``y_target`` minus the preview output produced by ``u_candidate``."""
    if mu_hat is None:
        mu_hat = detect_global_relative_degree(sys).mu_hat
    coeffs = output_preview_coeffs(sys, x_k, k, mu_hat, [u_candidate, *future_u])
    return float(y_target - coeffs.predict(x_k, u_candidate))


# -- explicit inverses ----------------------------------------------------------------


@dataclass(frozen=True)
class InversePwaSystem:
    """Explicit inverse as a PWA system driven by ``y[k + preview]``."""

    system: PwaSystem
    preview: int
    explicit: bool = True
    location_map: tuple = ()

    @property
    def anticausal(self) -> bool:
        return self.preview >= 1

    def simulate(self, x0, y_future, k0: int = 0):
        """Run the inverse; ``y_future[i]`` is ``y[k0 + i + preview]``."""
        return self.system.simulate(x0, y_future, k0)

    def matrices(self, q: int, k: int = 0):
        return self.system.matrices(q, k)


def _make_location(mats_fn, time_invariant: bool) -> Location:
    """Location from a function ``k -> (A, B, F, C, D, G)``."""
    first = mats_fn(0)
    if time_invariant:
        return Location(*(Schedule(m) for m in first))
    cached = functools.lru_cache(maxsize=8)(mats_fn)
    return Location(*(Schedule((lambda k, i=i: cached(k)[i]), np.shape(m))
                      for i, m in enumerate(first)))


def _assemble(A, B, F, Cbar, Dbar, Gbar):
    Abar = A + B @ Cbar
    Bbar = B @ Dbar
    Fbar = F + B @ Gbar
    return Abar, Bbar, Fbar, Cbar, Dbar, Gbar


def invert_mu0(sys: PwaSystem, times: Sequence[int] = (0,)) -> InversePwaSystem:
    """Inverse of a system with direct feedthrough in every location."""
    _require_siso(sys)
    for q, loc in enumerate(sys.locations):
        for k in times:
            if not is_nonzero(loc.D(k), np.ones(1)):
                raise ZeroFeedthrough(f"D of location {q} vanishes at k={k}")

    def build(loc):
        def mats(k):
            A, B, F, C, D, G = loc.at(k)
            if D[0, 0] == 0.0:
                raise ZeroFeedthrough(f"D vanishes at k={k}")
            Dbar = np.linalg.inv(D)
            return _assemble(A, B, F, -Dbar @ C, Dbar, -Dbar @ G)
        return _make_location(mats, loc.is_time_invariant)

    inv = PwaSystem([build(loc) for loc in sys.locations], sys.arrangement,
                    [sys.signatures.bitstrings(q) for q in range(sys.n_locations)],
                    name=f"{sys.name}-inverse" if sys.name else "inverse")
    return InversePwaSystem(inv, preview=0)


def invert_mu1(sys: PwaSystem, times: Sequence[int] = (0,)) -> InversePwaSystem:
    """Explicit anticausal inverse for global relative degree one.

    Requires location-independent ``C``, ``D`` and ``G``.
    """
    _require_siso(sys)
    if not outputs_location_independent(sys, times):
        raise AssumptionViolated("A5.5", "C, D and G must be identical in every location")
    out_loc = sys.locations[0]
    for q, loc in enumerate(sys.locations):
        for k in times:
            C1, B = out_loc.C(k + 1), loc.B(k)
            if not is_nonzero(C1 @ B, C1, B):
                raise SingularCB(f"C B vanishes for location {q} at k={k}")

    def build(loc):
        def mats(k):
            A, B, F = loc.A(k), loc.B(k), loc.F(k)
            C1, G1 = out_loc.C(k + 1), out_loc.G(k + 1)
            CB = C1 @ B
            if CB[0, 0] == 0.0:
                raise SingularCB(f"C B vanishes at k={k}")
            Dbar = np.linalg.inv(CB)
            return _assemble(A, B, F, -Dbar @ C1 @ A, Dbar, -Dbar @ (C1 @ F + G1))
        ti = loc.is_time_invariant and out_loc.is_time_invariant
        return _make_location(mats, ti)

    inv = PwaSystem([build(loc) for loc in sys.locations], sys.arrangement,
                    [sys.signatures.bitstrings(q) for q in range(sys.n_locations)],
                    name=f"{sys.name}-inverse" if sys.name else "inverse")
    return InversePwaSystem(inv, preview=1)


def output_switching_gain(sys: PwaSystem, times: Sequence[int] = (0,),
                          rtol: float = 1e-10) -> np.ndarray:
    """``P_o`` with ``P = P_o C``; raises when switching is not output based."""
    P = sys.arrangement.P
    for k in times:
        C = sys.locations[0].C(k)
        cc = float((C @ C.T)[0, 0])
        if cc == 0.0:
            raise AssumptionViolated("A5.6", "C is zero")
        P_o = P @ C.T / cc
        if np.linalg.norm(P - P_o @ C) > rtol * max(np.linalg.norm(P), 1e-300):
            raise AssumptionViolated("A5.6", "switching rows are not multiples of C")
    return P_o


def invert_mu2(sys: PwaSystem, times: Sequence[int] = (0,)) -> InversePwaSystem:
    """Explicit anticausal inverse for global relative degree two.

    Switching must depend on the output only, so the location at ``k + 1``
    follows from ``x[k]`` without ``u[k]``. The inverse therefore lives on
    composite locations ``(q_k, q_{k+1})``; composite index is
    ``q_k * |Q| + q_{k+1}``.
    """
    _require_siso(sys)
    if not outputs_location_independent(sys, times):
        raise AssumptionViolated("A5.5", "C, D and G must be identical in every location")
    n_q = sys.n_locations
    if n_q > 1:
        output_switching_gain(sys, times)
    if not all(loc.A.is_constant and loc.F.is_constant for loc in sys.locations):
        raise NotImplementedError("relative-degree-two inversion needs constant A and F "
                                  "so the successor hyperplanes are fixed")
    out_loc = sys.locations[0]
    for q0 in range(n_q):
        for k in times:
            C1, B = out_loc.C(k + 1), sys.locations[q0].B(k)
            if is_nonzero(C1 @ B, C1, B):
                raise AssumptionViolated("A5.4", f"C B is nonzero in location {q0}")
            for q1 in range(n_q):
                C2, A1 = out_loc.C(k + 2), sys.locations[q1].A(k + 1)
                if not is_nonzero(C2 @ A1 @ B, C2, A1, B):
                    raise SingularCoefficient(f"C A B vanishes on sequence ({q0}, {q1})")

    P, beta, n_P = sys.arrangement.P, sys.arrangement.beta, sys.arrangement.n_P
    rows = [P] + [P @ loc.A(0) for loc in sys.locations]
    offsets = [beta] + [beta - P @ loc.F(0) for loc in sys.locations]
    arrangement = _unchecked_arrangement(np.vstack(rows), np.concatenate(offsets))
    n_tot = arrangement.n_P
    if n_tot > 16:
        raise ValueError("composite arrangement too large to enumerate")

    sigs: list[list[str]] = [[] for _ in range(n_q * n_q)]
    for bits in enumerate_signatures(n_tot):
        try:
            q0 = sys.signatures.lookup(bits[:n_P])
            blk = bits[n_P * (1 + q0): n_P * (2 + q0)]
            q1 = sys.signatures.lookup(blk)
        except Exception:
            continue
        sigs[q0 * n_q + q1].append("".join(str(int(b)) for b in bits))

    def build(q0, q1):
        l0, l1 = sys.locations[q0], sys.locations[q1]

        def mats(k):
            A0, B0, F0 = l0.A(k), l0.B(k), l0.F(k)
            A1, F1 = l1.A(k + 1), l1.F(k + 1)
            C2, G2 = out_loc.C(k + 2), out_loc.G(k + 2)
            coef = C2 @ A1 @ B0
            if coef[0, 0] == 0.0:
                raise SingularCoefficient(f"C A B vanishes at k={k}")
            Dbar = np.linalg.inv(coef)
            Cbar = -Dbar @ C2 @ A1 @ A0
            Gbar = -Dbar @ (C2 @ A1 @ F0 + C2 @ F1 + G2)
            return _assemble(A0, B0, F0, Cbar, Dbar, Gbar)

        ti = l0.is_time_invariant and l1.is_time_invariant and out_loc.is_time_invariant
        return _make_location(mats, ti)

    locs = [build(q0, q1) for q0 in range(n_q) for q1 in range(n_q)]
    inv = PwaSystem(locs, arrangement, sigs,
                    name=f"{sys.name}-inverse" if sys.name else "inverse")
    pairs = tuple((q0, q1) for q0 in range(n_q) for q1 in range(n_q))
    return InversePwaSystem(inv, preview=2, location_map=pairs)


def _unchecked_arrangement(P, beta) -> HyperplaneArrangement:
    """Arrangement that may contain constant (all-zero) rows."""
    arr = object.__new__(HyperplaneArrangement)
    P = np.array(P, dtype=float)
    beta = np.array(beta, dtype=float)
    if P.shape[0] != beta.shape[0]:
        raise DimensionMismatch("P and beta disagree")
    P.setflags(write=False)
    beta.setflags(write=False)
    object.__setattr__(arr, "P", P)
    object.__setattr__(arr, "beta", beta)
    return arr


def invert(sys: PwaSystem, mu_hat: int | None = None,
           times: Sequence[int] = (0,)) -> InversePwaSystem:
    """Dispatch to the explicit inverse for ``mu_hat`` in {0, 1, 2}."""
    if mu_hat is None:
        mu_hat = detect_global_relative_degree(sys, times=times).mu_hat
    if mu_hat == 0:
        return invert_mu0(sys, times)
    if mu_hat == 1:
        return invert_mu1(sys, times)
    if mu_hat == 2:
        return invert_mu2(sys, times)
    raise NotImplementedError(f"no explicit inverse for relative degree {mu_hat}")


# -- assumption table ------------------------------------------------------------


def assumption_table(sys: PwaSystem, times: Sequence[int] = (0,),
                     mu_hat: int | None = None) -> dict[str, str]:
    """Verdicts (pass / fail / assumed / n/a) for the decidable assumptions.

    Output-based switching is only required for the two-step preview
    inverse, so it reads ``n/a`` when ``mu_hat`` is known and not 2.
    """
    table = {"A5.1 reachability": "assumed"}
    table["A5.2 SISO"] = "pass" if sys.is_siso else "fail"
    table["A5.3 no input-dependent switching"] = "pass"
    if not sys.is_siso:
        return table
    comps = component_relative_degrees(sys, times)
    table["A5.4 uniform component relative degree"] = (
        "pass" if len(set(comps)) == 1 and comps[0] is not None else "fail")
    table["A5.5 location-independent outputs"] = (
        "pass" if outputs_location_independent(sys, times) else "fail")
    if sys.n_locations == 1 or (mu_hat is not None and mu_hat != 2):
        table["A5.6 output-based switching"] = "n/a"
    else:
        try:
            output_switching_gain(sys, times)
            table["A5.6 output-based switching"] = "pass"
        except AssumptionViolated:
            table["A5.6 output-based switching"] = "fail"
    return table
