"""Piecewise-affine and piecewise-defined discrete-time systems.

A state is localized by the binary vector ``delta = H(P x - beta)`` with the
Heaviside convention ``H(0) = 1``. Each location claims a set of such
vectors, and the active location's affine matrices drive the update

    x[k+1] = A x[k] + B u[k] + F,    y[k] = C x[k] + D u[k] + G.

Location indices are zero-based throughout the package.
"""

from __future__ import annotations

import bisect
import itertools
import json
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import ad
from .errors import DimensionMismatch, UnclaimedSignature

MAX_HYPERPLANES = 32


# -- signatures ---------------------------------------------------------------


def pack_bits(delta: Sequence[int]) -> int:
    """Pack a binary vector into an int, first element most significant."""
    code = 0
    for d in delta:
        code = (code << 1) | (1 if d else 0)
    return code


def unpack_bits(code: int, n: int) -> np.ndarray:
    return np.array([(code >> (n - 1 - i)) & 1 for i in range(n)], dtype=np.int8)


def _parse_signature(sig, n_P: int) -> int:
    if isinstance(sig, str):
        if len(sig) != n_P or set(sig) - {"0", "1"}:
            raise ValueError(f"bad signature string {sig!r} for n_P={n_P}")
        return int(sig, 2) if n_P else 0
    bits = [int(b) for b in np.ravel(sig)]
    if len(bits) != n_P or any(b not in (0, 1) for b in bits):
        raise ValueError(f"bad signature {sig!r} for n_P={n_P}")
    return pack_bits(bits)


@dataclass(frozen=True)
class HyperplaneArrangement:
    """Switching hyperplanes ``P z = beta``."""

    P: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float)).ravel()
        if P.shape[0] != beta.shape[0]:
            raise DimensionMismatch(f"P has {P.shape[0]} rows but beta has {beta.shape[0]}")
        if P.shape[0] > MAX_HYPERPLANES:
            raise ValueError(f"at most {MAX_HYPERPLANES} hyperplanes are supported")
        if P.shape[0] and np.any(np.all(P == 0.0, axis=1)):
            raise ValueError("P has an all-zero row")
        P.setflags(write=False)
        beta.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "beta", beta)

    @classmethod
    def empty(cls, n_z: int) -> "HyperplaneArrangement":
        return cls(np.zeros((0, n_z)), np.zeros(0))

    @property
    def n_P(self) -> int:
        return self.P.shape[0]

    @property
    def n_z(self) -> int:
        return self.P.shape[1]

    def margins(self, z) -> np.ndarray:
        return self.P @ np.asarray(ad.value(z), dtype=float) - self.beta

    def delta(self, z) -> np.ndarray:
        return (self.margins(z) >= 0.0).astype(np.int8)

    def on_boundary(self, z) -> bool:
        return bool(np.any(self.margins(z) == 0.0))


class LocationSignatureSet:
    """Per-location sets of binary localization vectors.

    Codes are kept in one sorted list so lookup is a binary search.
    """

    def __init__(self, signatures: Sequence[Iterable], n_P: int):
        self.n_P = int(n_P)
        per_location = []
        owner: dict[int, int] = {}
        for q, sigs in enumerate(signatures):
            if isinstance(sigs, str):
                sigs = [sigs]
            codes = sorted({_parse_signature(s, self.n_P) for s in sigs})
            for c in codes:
                if c in owner:
                    raise ValueError(
                        f"signature {format(c, f'0{self.n_P}b')} claimed by "
                        f"locations {owner[c]} and {q}"
                    )
                owner[c] = q
            per_location.append(tuple(codes))
        self._per_location = tuple(per_location)
        self._codes = sorted(owner)
        self._owners = [owner[c] for c in self._codes]

    @property
    def n_locations(self) -> int:
        return len(self._per_location)

    def codes(self, q: int) -> tuple[int, ...]:
        return self._per_location[q]

    def lookup_code(self, code: int) -> int:
        i = bisect.bisect_left(self._codes, code)
        if i < len(self._codes) and self._codes[i] == code:
            return self._owners[i]
        raise UnclaimedSignature(unpack_bits(code, self.n_P))

    def lookup(self, delta) -> int:
        return self.lookup_code(pack_bits(delta))

    def claims(self, q: int, delta) -> bool:
        code = pack_bits(delta)
        codes = self._per_location[q]
        i = bisect.bisect_left(codes, code)
        return i < len(codes) and codes[i] == code

    def selectors(self, delta) -> np.ndarray:
        """Values of every selector function at ``delta`` (0/1 per location)."""
        code = pack_bits(delta)
        return np.array([int(code in set(c)) for c in self._per_location], dtype=np.int8)

    def unclaimed(self) -> list[np.ndarray]:
        return [unpack_bits(c, self.n_P) for c in range(2 ** self.n_P)
                if c not in set(self._codes)]

    def bitstrings(self, q: int) -> list[str]:
        return [format(c, f"0{self.n_P}b") if self.n_P else "" for c in self._per_location[q]]


# -- matrix schedules -----------------------------------------------------------


class Schedule:
    """A matrix that is either constant or a function of the time index."""

    __slots__ = ("_const", "_fn", "shape")

    def __init__(self, m, shape: tuple[int, ...] | None = None):
        if isinstance(m, Schedule):
            self._const, self._fn, self.shape = m._const, m._fn, m.shape
            return
        if callable(m):
            self._const = None
            self._fn = m
            probe = np.asarray(m(0), dtype=float)
            self.shape = shape if shape is not None else probe.shape
            if shape is not None:
                probe = probe.reshape(shape)
        else:
            arr = np.asarray(m, dtype=float)
            if shape is not None:
                arr = arr.reshape(shape)
            arr.setflags(write=False)
            self._const = arr
            self._fn = None
            self.shape = arr.shape

    @property
    def is_constant(self) -> bool:
        return self._fn is None

    def __call__(self, k: int) -> np.ndarray:
        if self._fn is None:
            return self._const
        return np.asarray(self._fn(k), dtype=float).reshape(self.shape)


class ExogenousSchedule:
    """Affine schedule ``base + coeff * signal[k]`` (zero signal outside its range).

    Used for reference signals that enter a closed-loop model as known
    time-varying offsets.
    """

    def __init__(self, base, coeff, signal):
        self.base = np.asarray(base, dtype=float)
        self.coeff = np.asarray(coeff, dtype=float).reshape(self.base.shape)
        self.signal = np.asarray(signal, dtype=float).ravel()

    def __call__(self, k: int) -> np.ndarray:
        w = self.signal[k] if 0 <= k < self.signal.size else 0.0
        return self.base + self.coeff * w


@dataclass(frozen=True)
class Location:
    """Affine component model of one location."""

    A: Schedule
    B: Schedule
    F: Schedule
    C: Schedule
    D: Schedule
    G: Schedule

    @classmethod
    def from_matrices(cls, A, B, C, D=None, F=None, G=None) -> "Location":
        A_s = Schedule(A)
        n_x = A_s.shape[0]
        B_s = Schedule(B)
        if len(B_s.shape) == 1:
            B_s = Schedule(B, (n_x, 1))
        n_u = B_s.shape[1]
        C_s = Schedule(C)
        if len(C_s.shape) == 1:
            C_s = Schedule(C, (1, n_x))
        n_y = C_s.shape[0]
        D_s = Schedule(np.zeros((n_y, n_u)) if D is None else D, (n_y, n_u))
        F_s = Schedule(np.zeros(n_x) if F is None else F, (n_x,))
        G_s = Schedule(np.zeros(n_y) if G is None else G, (n_y,))
        loc = cls(A_s, B_s, F_s, C_s, D_s, G_s)
        loc.check_dims()
        return loc

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.A.shape[0], self.B.shape[1], self.C.shape[0]

    def check_dims(self):
        n_x, n_u, n_y = self.dims
        want = {"A": (n_x, n_x), "B": (n_x, n_u), "F": (n_x,),
                "C": (n_y, n_x), "D": (n_y, n_u), "G": (n_y,)}
        for name, shape in want.items():
            got = getattr(self, name).shape
            if tuple(got) != shape:
                raise DimensionMismatch(f"{name} has shape {got}, expected {shape}")

    def at(self, k: int):
        return (self.A(k), self.B(k), self.F(k), self.C(k), self.D(k), self.G(k))

    @property
    def is_time_invariant(self) -> bool:
        return all(getattr(self, n).is_constant for n in "ABFCDG")


# -- simulation results ------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    x: np.ndarray  # (T+1, n_x), or Dual
    y: np.ndarray  # (T,) for SISO else (T, n_y), or Dual
    delta: np.ndarray  # (T, n_P)
    locations: np.ndarray  # (T,)
    boundary_contact: bool


def _as_input(u, n_u: int):
    if ad.is_dual(u):
        return u.reshape(n_u)
    return np.asarray(u, dtype=float).reshape(n_u)


class _SwitchedSystem:
    """Shared simulation loop for PWA and PWD systems."""

    n_x: int
    n_u: int
    n_y: int

    def _step_full(self, x, u, k):
        raise NotImplementedError

    def step(self, x, u, k: int = 0):
        """One update; returns ``(x_next, y)`` with ``y`` scalar for SISO."""
        x_next, y, _, _, _ = self._step_full(x, _as_input(u, self.n_u), k)
        return x_next, (y[0] if self.n_y == 1 else y)

    def simulate(self, x0, u_seq, k0: int = 0) -> Trajectory:
        """Run the system over ``len(u_seq)`` steps starting at time ``k0``."""
        x = x0 if ad.is_dual(x0) else np.asarray(x0, dtype=float).reshape(self.n_x)
        xs, ys, deltas, locs = [x], [], [], []
        contact = False
        for i in range(len(u_seq)):
            x, y, delta, q, touch = self._step_full(x, _as_input(u_seq[i], self.n_u), k0 + i)
            xs.append(x)
            ys.append(y)
            deltas.append(delta)
            locs.append(q)
            contact = contact or touch
        n_P = self.arrangement.n_P
        y_traj = ad.stack(ys) if ys else np.zeros((0, self.n_y))
        if self.n_y == 1:
            y_traj = y_traj[:, 0] if ys else np.zeros(0)
        return Trajectory(
            x=ad.stack(xs),
            y=y_traj,
            delta=np.array(deltas, dtype=np.int8).reshape(len(deltas), n_P),
            locations=np.array(locs, dtype=int),
            boundary_contact=contact,
        )


class PwaSystem(_SwitchedSystem):
    """Discrete-time piecewise-affine system with Heaviside localization.

    Parameters
    ----------
    locations
        One :class:`Location` per location, or mappings with keys
        ``A, B, C`` and optional ``D, F, G``.
    arrangement
        Switching hyperplanes over the state. May be omitted for a single
        location.
    signatures
        For each location, the binary vectors (or bit strings) it claims.
    """

    def __init__(self, locations, arrangement: HyperplaneArrangement | None = None,
                 signatures: Sequence[Iterable] | None = None, name: str = ""):
        locs = [loc if isinstance(loc, Location) else Location.from_matrices(**loc)
                for loc in locations]
        if not locs:
            raise ValueError("at least one location is required")
        self.n_x, self.n_u, self.n_y = locs[0].dims
        for loc in locs:
            if loc.dims != (self.n_x, self.n_u, self.n_y):
                raise DimensionMismatch("locations disagree on dimensions")
        if arrangement is None:
            if len(locs) > 1:
                raise ValueError("multiple locations need a hyperplane arrangement")
            arrangement = HyperplaneArrangement.empty(self.n_x)
        if arrangement.n_z != self.n_x:
            raise DimensionMismatch(f"P has {arrangement.n_z} columns, expected {self.n_x}")
        if len(locs) > 1 and arrangement.n_P == 0:
            raise ValueError("multiple locations need at least one hyperplane")
        if signatures is None:
            if len(locs) > 1:
                raise ValueError("multiple locations need signature sets")
            signatures = [list(enumerate_signatures(arrangement.n_P))]
        if len(signatures) != len(locs):
            raise ValueError("one signature set per location is required")
        self.locations = tuple(locs)
        self.arrangement = arrangement
        self.signatures = LocationSignatureSet(signatures, arrangement.n_P)
        self.name = name

    @property
    def n_locations(self) -> int:
        return len(self.locations)

    @property
    def is_siso(self) -> bool:
        return self.n_u == 1 and self.n_y == 1

    @property
    def is_time_invariant(self) -> bool:
        return all(loc.is_time_invariant for loc in self.locations)

    def localize(self, x):
        """Return ``(delta, q)`` for state ``x``."""
        delta = self.arrangement.delta(x)
        return delta, self.signatures.lookup(delta)

    def matrices(self, q: int, k: int = 0):
        """``(A, B, F, C, D, G)`` of location ``q`` at time ``k``."""
        return self.locations[q].at(k)

    def _step_full(self, x, u, k):
        delta, q = self.localize(x)
        A, B, F, C, D, G = self.locations[q].at(k)
        x_next = A @ x + B @ u + F
        y = C @ x + D @ u + G
        return x_next, y, delta, q, self.arrangement.on_boundary(x)

    def output(self, x, u, k: int = 0):
        _, q = self.localize(x)
        _, _, _, C, D, G = self.locations[q].at(k)
        y = C @ x + D @ _as_input(u, self.n_u) + G
        return y[0] if self.n_y == 1 else y

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        exo = None
        locs = []
        for q, loc in enumerate(self.locations):
            entry = {}
            for name in "ABCD":
                sched = getattr(loc, name)
                if not sched.is_constant:
                    raise ValueError(f"{name} of location {q} is time-varying; cannot serialize")
                entry[name] = sched(0).tolist()
            for name in "FG":
                sched = getattr(loc, name)
                fn = sched._fn
                if sched.is_constant:
                    entry[name] = sched(0).tolist()
                elif isinstance(fn, ExogenousSchedule):
                    entry[name] = fn.base.tolist()
                    entry[f"{name}_exo"] = fn.coeff.tolist()
                    if exo is not None and not np.array_equal(exo, fn.signal):
                        raise ValueError("only one exogenous signal can be serialized")
                    exo = fn.signal
                else:
                    raise ValueError(f"{name} of location {q} is time-varying; cannot serialize")
            entry["signatures"] = self.signatures.bitstrings(q)
            locs.append(entry)
        doc = {
            "schema": "pwa-model/1",
            "name": self.name,
            "n_x": self.n_x, "n_u": self.n_u, "n_y": self.n_y,
            "arrangement": {"P": self.arrangement.P.tolist(),
                            "beta": self.arrangement.beta.tolist()},
            "locations": locs,
        }
        if exo is not None:
            doc["exogenous"] = exo.tolist()
        return doc

    def to_json(self, path=None, indent: int | None = 1) -> str:
        text = json.dumps(self.to_dict(), indent=indent)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, doc: dict) -> "PwaSystem":
        if doc.get("schema") != "pwa-model/1":
            raise ValueError(f"unsupported model schema {doc.get('schema')!r}")
        n_x, n_u, n_y = int(doc["n_x"]), int(doc["n_u"]), int(doc["n_y"])
        exo = doc.get("exogenous")
        locs = []
        sigs = []
        for entry in doc["locations"]:
            mats = {}
            for name, shape in (("A", (n_x, n_x)), ("B", (n_x, n_u)),
                                ("C", (n_y, n_x)), ("D", (n_y, n_u))):
                default = np.zeros(shape) if name == "D" else None
                mats[name] = Schedule(entry[name] if default is None else entry.get(name, default),
                                      shape)
            for name, shape in (("F", (n_x,)), ("G", (n_y,))):
                base = np.asarray(entry.get(name, np.zeros(shape)), dtype=float).reshape(shape)
                if f"{name}_exo" in entry:
                    if exo is None:
                        raise ValueError(f"{name}_exo given without an exogenous signal")
                    mats[name] = Schedule(ExogenousSchedule(base, entry[f"{name}_exo"], exo), shape)
                else:
                    mats[name] = Schedule(base)
            loc = Location(**mats)
            loc.check_dims()
            locs.append(loc)
            sigs.append(entry.get("signatures"))
        if len(locs) == 1 and sigs[0] is None:
            sigs = None
        arr = doc.get("arrangement")
        arrangement = (HyperplaneArrangement(np.asarray(arr["P"], float).reshape(-1, n_x),
                                             arr["beta"])
                       if arr is not None else None)
        return cls(locs, arrangement, sigs, name=doc.get("name", ""))

    @classmethod
    def from_json(cls, text_or_path) -> "PwaSystem":
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            with open(text_or_path, encoding="utf-8") as fh:
                text = fh.read()
        return cls.from_dict(json.loads(text))


class PwdSystem(_SwitchedSystem):
    """Piecewise-defined system switching over the joint (state, input) space.

    ``transitions[q](x, u, k)`` and ``outputs[q](x, u, k)`` must be pure and
    written with numpy operations (or :mod:`pwainv.ad` helpers) so dual
    numbers can flow through them.
    """

    def __init__(self, transitions: Sequence[Callable], outputs: Sequence[Callable],
                 arrangement: HyperplaneArrangement, signatures: Sequence[Iterable],
                 n_x: int, n_u: int = 1, n_y: int = 1, name: str = ""):
        if len(transitions) != len(outputs) or len(transitions) != len(signatures):
            raise ValueError("one transition, output and signature set per polytope")
        if arrangement.n_z != n_x + n_u:
            raise DimensionMismatch("PWD arrangement must act on the joint (x, u) space")
        self.transitions = tuple(transitions)
        self.outputs = tuple(outputs)
        self.arrangement = arrangement
        self.signatures = LocationSignatureSet(signatures, arrangement.n_P)
        self.n_x, self.n_u, self.n_y = n_x, n_u, n_y
        self.name = name

    @property
    def n_locations(self) -> int:
        return len(self.transitions)

    def _joint(self, x, u):
        return np.concatenate([np.asarray(ad.value(x), float).ravel(),
                               np.asarray(ad.value(u), float).ravel()])

    def localize(self, x, u=None):
        z = self._joint(x, np.zeros(self.n_u) if u is None else u)
        delta = self.arrangement.delta(z)
        return delta, self.signatures.lookup(delta)

    def _step_full(self, x, u, k):
        z = self._joint(x, u)
        delta = self.arrangement.delta(z)
        q = self.signatures.lookup(delta)
        x_next = self.transitions[q](x, u, k)
        if not ad.is_dual(x_next):
            x_next = np.asarray(x_next, dtype=float).reshape(self.n_x)
        y = self.outputs[q](x, u, k)
        y = y.reshape(self.n_y) if ad.is_dual(y) else np.asarray(y, dtype=float).reshape(self.n_y)
        return x_next, y, delta, q, self.arrangement.on_boundary(z)


def enumerate_signatures(n_P: int) -> Iterable[np.ndarray]:
    for bits in itertools.product((0, 1), repeat=n_P):
        yield np.array(bits, dtype=np.int8)
