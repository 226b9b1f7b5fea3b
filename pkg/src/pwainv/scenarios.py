"""Benchmark systems: inkjet printhead positioner, nonlinear mass-spring-damper,
and a linear non-minimum-phase counterexample for classical ILC conditions.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.signal

from . import ad
from .errors import ConfigError, RealizationFailure
from .inversion import invert_mu1
from .lifted import LiftedFilterSet, LiftedModel, build_filters, build_lifted
from .pwa import (
    ExogenousSchedule,
    HyperplaneArrangement,
    Location,
    PwaSystem,
    PwdSystem,
    Schedule,
)

# -- resampling -------------------------------------------------------------------------


def decimate(x, factor: int) -> np.ndarray:
    """Keep every ``factor``-th sample starting at index 0."""
    if factor < 1:
        raise ValueError("factor must be a positive integer")
    return np.asarray(x)[::factor]


def zoh_upsample(x, factor: int) -> np.ndarray:
    """Repeat each sample ``factor`` times."""
    if factor < 1:
        raise ValueError("factor must be a positive integer")
    return np.repeat(np.asarray(x), factor)


def resample(x, mode: str, factor: int) -> np.ndarray:
    if mode == "decimate":
        return decimate(x, factor)
    if mode == "zoh_upsample":
        return zoh_upsample(x, factor)
    raise ValueError(f"unknown resampling mode {mode!r}")


# -- printhead -----------------------------------------------------------------------


@dataclass(frozen=True)
class PlantParams:
    poles: tuple
    zeros: tuple
    gain: float
    a1: float
    a2: float
    b: float
    Ts: float
    # "lowfreq": |gain| with the sign that keeps prod(1 - zero) positive, so
    # every plant has the same low-frequency sign; "leading": literal zpk gain
    gain_convention: str = "lowfreq"

    @property
    def leading_gain(self) -> float:
        if self.gain_convention == "leading":
            return float(self.gain)
        if self.gain_convention != "lowfreq":
            raise ConfigError(f"unknown gain convention {self.gain_convention!r}")
        sign = np.sign(np.real(np.prod([1.0 - z for z in self.zeros]))) if self.zeros else 1.0
        return float(sign * abs(self.gain))


TRUTH_PLANT = PlantParams(poles=(0.88 + 0.37j, 0.88 - 0.37j, 1.00, 1.00, 0.0),
                          zeros=(-5.10, -0.44, 0.16), gain=2.42e-7,
                          a1=-1.65, a2=0.70, b=0.027, Ts=0.001)
CONTROL_PLANT = PlantParams(poles=(0.67 + 0.61j, 0.67 - 0.61j, 0.99, 1.00),
                            zeros=(33.10, -2.21, 0.16), gain=2.38e-7,
                            a1=-1.31, a2=0.50, b=0.093, Ts=0.002)


@dataclass(frozen=True)
class ReferenceProfile:
    """Move-and-return trapezoid with smooth (quintic) or linear ramps.

    Times are in seconds; the profile rests at zero before ``start`` and
    after the return ramp.
    """

    amplitude: float = 0.15
    start: float = 0.30
    ramp: float = 0.25
    hold: float = 0.90
    shape: str = "quintic"

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)

        def s(tau):
            tau = np.clip(tau, 0.0, 1.0)
            if self.shape == "linear":
                return tau
            return tau ** 3 * (10.0 - 15.0 * tau + 6.0 * tau ** 2)

        up = s((t - self.start) / self.ramp)
        down = s((t - self.start - self.ramp - self.hold) / self.ramp)
        return self.amplitude * (up - down)

    @property
    def end(self) -> float:
        return self.start + 2 * self.ramp + self.hold


@dataclass(frozen=True)
class PrintheadConfig:
    truth: PlantParams = TRUTH_PLANT
    control: PlantParams = CONTROL_PLANT
    K_d: float = 3.0
    K_p1: float = 40.0
    K_p2: float = 160.0
    e_switch: float = 2e-3
    sigma_process: float = 0.03
    sigma_measure: float = 50e-6
    n_control: int = 1000
    factor: int = 2
    n_edge: int = 35
    reference: ReferenceProfile = ReferenceProfile()
    ptype_gain: float = 27.0
    gradient_gain: float = 4255.0

    @property
    def n_truth(self) -> int:
        """Truth-rate reference samples strictly inside the trial."""
        return self.factor * self.n_control - 1

    @classmethod
    def from_dict(cls, d: dict) -> "PrintheadConfig":
        return _replace_nested(cls(), d)


def zpk_realization(zeros, poles, gain) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Controllable canonical realization of a pole-zero-gain transfer function."""
    num = np.real(gain * np.poly(zeros)) if len(zeros) else np.array([float(gain)])
    den = np.real(np.poly(poles))
    if len(num) > len(den):
        raise RealizationFailure("improper transfer function")
    A, B, C, D = scipy.signal.tf2ss(num, den)
    if not np.all(np.isfinite(A)):
        raise RealizationFailure("non-finite realization")
    return A, B, C, D


def controller_matrices(p: PlantParams, K_d: float, K_p: float):
    """Lowpass-PD controller with an extra state holding the previous error."""
    a1, a2, b, Ts = p.a1, p.a2, p.b, p.Ts
    Ac = np.array([[0.0, 1.0, 0.0], [-a2, -a1, 0.0], [0.0, 0.0, 0.0]])
    Bc = np.array([[0.0], [1.0], [1.0]])
    Cc = -b * np.array([[K_d * (1 + a2) / Ts + K_p * a2, K_d * a1 / Ts + K_p * (a1 - 1), 0.0]])
    Dc = np.array([[b * (K_p + K_d / Ts)]])
    return Ac, Bc, Cc, Dc


def closed_loop_printhead(p: PlantParams, cfg: PrintheadConfig, exogenous) -> PwaSystem:
    """Plant plus switching feedback as one PWA system driven by feedforward ``u``.

    The reference (or any signal the feedback compares against) enters
    through the exogenous offset ``F_k = [Bp Dc; Bc] w_k``. Location 0 uses
    the low proportional gain and is active while the stored error is
    within the switching band.
    """
    Ap, Bp, Cp, Dp = zpk_realization(p.zeros, p.poles, p.leading_gain)
    if np.any(Dp != 0):
        raise RealizationFailure("plant must be strictly proper")
    n_p = Ap.shape[0]
    locs = []
    for K_p in (cfg.K_p1, cfg.K_p2):
        Ac, Bc, Cc, Dc = controller_matrices(p, cfg.K_d, K_p)
        A = np.block([[Ap - Bp @ Dc @ Cp, Bp @ Cc], [-Bc @ Cp, Ac]])
        B = np.vstack([Bp, np.zeros((3, 1))])
        F_coef = np.concatenate([(Bp @ Dc).ravel(), Bc.ravel()])
        C = np.hstack([Cp, np.zeros((1, 3))])
        n_x = A.shape[0]
        F = Schedule(ExogenousSchedule(np.zeros(n_x), F_coef, exogenous), (n_x,))
        locs.append(Location(Schedule(A), Schedule(B), F, Schedule(C),
                             Schedule(np.zeros((1, 1))), Schedule(np.zeros(1))))
    n_x = n_p + 3
    P = np.zeros((2, n_x))
    P[0, -1] = -1.0
    P[1, -1] = 1.0
    arrangement = HyperplaneArrangement(P, [-cfg.e_switch, -cfg.e_switch])
    return PwaSystem(locs, arrangement, [["11"], ["10", "01"]], name="printhead")


@dataclass
class Printhead:
    """Everything needed to run printhead inversion and learning experiments."""

    cfg: PrintheadConfig
    control: PwaSystem
    r: np.ndarray  # lifted reference, control times 1..N
    r_control: np.ndarray  # control times 0..N
    r_truth: np.ndarray  # truth times 0..factor*N
    filters: LiftedFilterSet
    forward: LiftedModel
    truth_sim: Callable
    N: int
    mu: int = 1

    def inverse(self):
        return invert_mu1(self.control, times=(0, self.N // 2))

    def truth_model(self, exogenous) -> PwaSystem:
        return closed_loop_printhead(self.cfg.truth, self.cfg, exogenous)


class PrintheadTruth:
    """Noisy truth-rate simulation seen through the control-rate interface."""

    def __init__(self, cfg: PrintheadConfig, r_truth: np.ndarray):
        self.cfg = cfg
        self.r_truth = np.asarray(r_truth, dtype=float)
        self._nominal = closed_loop_printhead(cfg.truth, cfg, self.r_truth)
        self.C = self._nominal.locations[0].C(0)[0]

    def simulate(self, u_lifted, rng: np.random.Generator | None = None):
        """Return ``(y_measured_lifted, y_true_fine)``."""
        cfg = self.cfg
        f = cfg.factor
        n_fine = self.r_truth.size - 1
        u_fine = zoh_upsample(np.asarray(u_lifted, dtype=float), f)[:n_fine]
        if rng is not None:
            w_y = cfg.sigma_measure * rng.standard_normal(n_fine + 1)
            w_p = cfg.sigma_process * rng.standard_normal(n_fine)
            # measurement noise enters the loop through the error the controller sees
            sys = closed_loop_printhead(cfg.truth, cfg, self.r_truth - w_y)
        else:
            w_y = np.zeros(n_fine + 1)
            w_p = np.zeros(n_fine)
            sys = self._nominal
        traj = sys.simulate(np.zeros(sys.n_x), u_fine + w_p)
        y_true = traj.x @ self.C
        y_meas = y_true + w_y
        return decimate(y_meas, f)[1:], y_true

    def __call__(self, u_lifted, rng: np.random.Generator | None = None) -> np.ndarray:
        return self.simulate(u_lifted, rng)[0]


def build_printhead(cfg: PrintheadConfig | None = None) -> Printhead:
    """Control model, truth simulator, reference and filters for the printhead."""
    cfg = cfg or PrintheadConfig()
    N = cfg.n_control
    Tc = cfg.control.Ts
    Tt = cfg.truth.Ts
    if not math.isclose(Tc, cfg.factor * Tt):
        raise ConfigError("control period must be factor times the truth period")
    t_control = np.arange(N + 1) * Tc
    t_truth = np.arange(cfg.factor * N + 1) * Tt
    r_control = cfg.reference(t_control)
    r_truth = cfg.reference(t_truth)
    control = closed_loop_printhead(cfg.control, cfg, r_control)
    filters = build_filters(cfg.control.a1, cfg.control.a2, cfg.control.b, N, cfg.n_edge)
    forward = build_lifted(control, np.zeros(control.n_x), N, 1)
    return Printhead(cfg=cfg, control=control, r=r_control[1:], r_control=r_control,
                     r_truth=r_truth, filters=filters, forward=forward,
                     truth_sim=PrintheadTruth(cfg, r_truth), N=N)


# -- mass-spring-damper ------------------------------------------------------------------


@dataclass(frozen=True)
class MsdConfig:
    """``theta = [m, rho0, rho1, nu, kappa0, kappa1]``."""

    theta_hat: tuple = (1.0, 1.0, 1.0, 1.0, 4.0, 1.0)
    Ts_truth: float = 0.001
    Ts_control: float = 0.01
    duration: float = 9.5
    mu: int = 2
    damping_form: str = "euler"  # or "printed"

    @property
    def N(self) -> int:
        return int(round(self.duration / self.Ts_control))

    @property
    def lifted_length(self) -> int:
        return self.N - self.mu + 1

    @classmethod
    def from_dict(cls, d: dict) -> "MsdConfig":
        return _replace_nested(cls(), d)


def msd_reference(N: int, Ts: float) -> np.ndarray:
    """``r(0) = 0`` and ``r(k) = sin((k - 1) Ts)`` for ``k >= 1``."""
    k = np.arange(N + 1)
    r = np.sin((k - 1) * Ts)
    r[0] = 0.0
    return r


def msd_control_model(theta, Ts: float, damping_form: str = "euler") -> PwdSystem:
    """Forward-Euler model with state ``[y(k), y(k+1)]``.

    Polytope 0 is extension (``y > 0``, stiffness ``kappa0``), polytope 1
    is compression (``y <= 0``, stiffness ``kappa1``).
    """
    m, rho0, rho1, nu, kappa0, kappa1 = (float(v) for v in theta)
    if damping_form not in ("euler", "printed"):
        raise ConfigError(f"unknown damping form {damping_form!r}")
    printed = damping_form == "printed"

    def transition(kappa):
        def f(x, u, k):
            y0, y1 = x[0], x[1]
            uu = u[0]
            damping = nu / Ts * y1 if printed else nu / Ts * (y1 - y0)
            accel = -kappa * y0 ** 3 - damping + rho0 * uu + rho1 * np.arctan(uu)
            return ad.stack([y1, 2.0 * y1 - y0 + Ts * Ts / m * accel])
        return f

    def output(x, u, k):
        return x[0:1]

    arrangement = HyperplaneArrangement([[-1.0, 0.0, 0.0]], [0.0])
    return PwdSystem([transition(kappa0), transition(kappa1)], [output, output],
                     arrangement, [["0"], ["1"]], n_x=2, n_u=1, n_y=1, name="msd")


def msd_truth_rk4(theta, u, N: int, Ts_control: float, Ts_truth: float) -> np.ndarray:
    """Integrate the continuous model with RK4 under zero-order-hold input.

    Returns the displacement at control times ``0 .. N``.
    """
    m, rho0, rho1, nu, kappa0, kappa1 = (float(v) for v in theta)
    sub = int(round(Ts_control / Ts_truth))
    h = Ts_control / sub
    y, v = 0.0, 0.0
    out = np.empty(N + 1)
    out[0] = 0.0
    u = np.asarray(u, dtype=float)
    for k in range(N):
        uk = u[k] if k < u.size else 0.0
        force = (rho0 * uk + rho1 * math.atan(uk)) / m

        def acc(yy, vv):
            kappa = kappa0 if yy > 0.0 else kappa1
            return -kappa / m * yy * yy * yy - nu / m * vv + force

        for _ in range(sub):
            a1 = acc(y, v)
            y2, v2 = y + 0.5 * h * v, v + 0.5 * h * a1
            a2 = acc(y2, v2)
            y3, v3 = y + 0.5 * h * v2, v + 0.5 * h * a2
            a3 = acc(y3, v3)
            y4, v4 = y + h * v3, v + h * a3
            a4 = acc(y4, v4)
            y += h / 6.0 * (v + 2.0 * v2 + 2.0 * v3 + v4)
            v += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        out[k + 1] = y
    return out


@dataclass
class Msd:
    cfg: MsdConfig
    theta: np.ndarray
    control: PwdSystem
    forward: LiftedModel
    r: np.ndarray
    truth_sim: Callable
    N: int
    mu: int


def build_msd(cfg: MsdConfig | None = None, theta_error=None, truth: str = "rk4") -> Msd:
    """Mass-spring-damper with truth parameters ``(1 + theta_error) * theta_hat``.

    ``truth="euler"`` uses the control model itself as the truth.
    """
    cfg = cfg or MsdConfig()
    theta_hat = np.asarray(cfg.theta_hat, dtype=float)
    e = np.zeros(6) if theta_error is None else np.asarray(theta_error, dtype=float)
    if e.shape != (6,) or np.any(np.abs(e) >= 1.0):
        raise ConfigError("theta_error must have 6 entries of magnitude below 1")
    theta = (1.0 + e) * theta_hat
    N, mu = cfg.N, cfg.mu
    control = msd_control_model(theta_hat, cfg.Ts_control, cfg.damping_form)
    forward = build_lifted(control, np.zeros(2), N, mu)
    r = msd_reference(N, cfg.Ts_control)[mu:]

    if truth == "euler":
        plant = build_lifted(msd_control_model(theta, cfg.Ts_control, cfg.damping_form),
                             np.zeros(2), N, mu)

        def truth_sim(u, rng=None):
            return plant(np.asarray(u, dtype=float))
    elif truth == "rk4":
        def truth_sim(u, rng=None):
            return msd_truth_rk4(theta, u, N, cfg.Ts_control, cfg.Ts_truth)[mu:]
    else:
        raise ConfigError(f"unknown truth model {truth!r}")
    return Msd(cfg=cfg, theta=theta, control=control, forward=forward, r=r,
               truth_sim=truth_sim, N=N, mu=mu)


# -- linear counterexample -------------------------------------------------------------


@dataclass(frozen=True)
class AppendixLtiConfig:
    A: tuple = ((-0.3, -0.79, 0.53), (0.0, 0.5, 1.0), (0.0, -0.36, 0.5))
    B: tuple = (0.0, 0.0, 1.34)
    C: tuple = (0.7, 1.1, -0.74)
    gain_scale: float = 0.5
    # (gamma1, gamma0) of the cited learning laws; the free one uses 0.5
    schemes: tuple = (("saab", 1.0, -1.0), ("wang", 1.0, 0.0), ("sun", 1.0, 0.5))
    N: int = 300
    amplitude: float = 1.0

    @classmethod
    def from_dict(cls, d: dict) -> "AppendixLtiConfig":
        return _replace_nested(cls(), d)


@dataclass
class AppendixLti:
    cfg: AppendixLtiConfig
    system: PwaSystem
    CB: float
    learning_gain: float
    jang_factor: float
    saab_norm: float
    inverse_eigenvalues: np.ndarray
    forward: LiftedModel
    r: np.ndarray
    N: int
    mu: int = 1

    def learning_law_matrix(self, gamma1: float, gamma0: float) -> np.ndarray:
        """Lifted form of ``u(k) += L (gamma1 e(k+1) + gamma0 e(k))``.

        The lifted error starts at ``e(1)``; ``e(0)`` is zero because the
        output starts on the reference.
        """
        n = self.N - self.mu + 1
        shift = np.eye(n, k=-1)
        return self.learning_gain * (gamma1 * np.eye(n) + gamma0 * shift)

    def truth_sim(self, u, rng=None):
        return self.forward(np.asarray(u, dtype=float))


def smooth_bump_reference(N: int, amplitude: float = 1.0, pad_fraction: float = 0.2) -> np.ndarray:
    """Zero-padded raised-cosine bump over samples ``0 .. N``."""
    k = np.arange(N + 1)
    a, b = pad_fraction * N, (1.0 - pad_fraction) * N
    tau = np.clip((k - a) / (b - a), 0.0, 1.0)
    return amplitude * 0.5 * (1.0 - np.cos(2.0 * np.pi * tau))


def build_appendix_lti(cfg: AppendixLtiConfig | None = None) -> AppendixLti:
    cfg = cfg or AppendixLtiConfig()
    A = np.array(cfg.A, dtype=float)
    B = np.array(cfg.B, dtype=float).reshape(3, 1)
    C = np.array(cfg.C, dtype=float).reshape(1, 3)
    CB = float((C @ B)[0, 0])
    if CB == 0.0:
        raise ConfigError("CB must be nonzero")
    system = PwaSystem([{"A": A, "B": B, "C": C}], name="appendix-lti")
    L = cfg.gain_scale / CB
    jang = abs(1.0 - L * 1.0 * CB)
    saab = float(np.linalg.norm(A, np.inf))
    Abar = A - B @ C @ A / CB
    inv_eig = np.linalg.eigvals(Abar)
    forward = build_lifted(system, np.zeros(3), cfg.N, 1)
    r = smooth_bump_reference(cfg.N, cfg.amplitude)[1:]
    return AppendixLti(cfg=cfg, system=system, CB=CB, learning_gain=L, jang_factor=jang,
                       saab_norm=saab, inverse_eigenvalues=inv_eig, forward=forward,
                       r=r, N=cfg.N)


# -- config files --------------------------------------------------------------------------


def _replace_nested(obj, overrides: dict):
    if not overrides:
        return obj
    fields = {f.name: f for f in dataclasses.fields(obj)}
    changes = {}
    for key, val in overrides.items():
        if key not in fields:
            raise ConfigError(f"unknown parameter {key!r} for {type(obj).__name__}")
        cur = getattr(obj, key)
        if dataclasses.is_dataclass(cur) and isinstance(val, dict):
            if isinstance(cur, PlantParams):
                val = {k: (tuple(complex(*p) if isinstance(p, list) else p for p in v)
                           if k in ("poles", "zeros") else v) for k, v in val.items()}
            changes[key] = _replace_nested(cur, val)
        elif isinstance(cur, tuple):
            changes[key] = tuple(tuple(v) if isinstance(v, list) else v for v in val)
        else:
            changes[key] = type(cur)(val) if isinstance(cur, (int, float, str)) else val
    return dataclasses.replace(obj, **changes)


SCENARIO_SCHEMA = "scenario/1"
SCENARIOS = ("printhead", "msd", "appendix_lti")


@dataclass(frozen=True)
class ScenarioFile:
    scenario: str
    params: dict = field(default_factory=dict)
    scheme: str | None = None
    trials: int | None = None
    seed: int | None = None
    gain: float | None = None
    theta_error: tuple | None = None
    truth: str | None = None
    name: str = ""


def read_scenario_document(path) -> dict:
    """Parse a JSON or (by ``.toml`` suffix) TOML file into a dict."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python 3.10
            import tomli as tomllib

        return tomllib.loads(text)
    return json.loads(text)


def load_scenario(path) -> ScenarioFile:
    """Read a ``scenario/1`` JSON or TOML file."""
    doc = read_scenario_document(path)
    if doc.get("schema") != SCENARIO_SCHEMA:
        raise ConfigError(f"expected schema {SCENARIO_SCHEMA!r}, got {doc.get('schema')!r}")
    name = doc.get("scenario")
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; expected one of {SCENARIOS}")
    allowed = {f.name for f in dataclasses.fields(ScenarioFile)}
    extra = set(doc) - allowed - {"schema"}
    if extra:
        raise ConfigError(f"unknown keys {sorted(extra)}")
    kw = {k: v for k, v in doc.items() if k in allowed}
    if "theta_error" in kw and kw["theta_error"] is not None:
        kw["theta_error"] = tuple(kw["theta_error"])
    return ScenarioFile(**kw)


def scenario_config(sf: ScenarioFile):
    if sf.scenario == "printhead":
        return PrintheadConfig.from_dict(sf.params)
    if sf.scenario == "msd":
        return MsdConfig.from_dict(sf.params)
    return AppendixLtiConfig.from_dict(sf.params)


@dataclass(frozen=True)
class SweepResult:
    theta_errors: np.ndarray
    converged: np.ndarray
    trials_needed: np.ndarray  # -1 when not converged
    final_nrmse: np.ndarray

    @property
    def fraction_converged(self) -> float:
        return float(np.mean(self.converged))


def msd_model_error_sweep(n_models: int = 20, max_norm: float = 0.15, n_trials: int = 20,
                          threshold: float = 0.005, seed: int = 0,
                          cfg: MsdConfig | None = None) -> SweepResult:
    """Newton ILC on MSD truths with random parameter errors.

    Error magnitudes are evenly spaced up to ``max_norm``; directions are
    uniform on the sphere.
    """
    from .ilc import ControlModels, IlcScheme, run_campaign

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x5eed])))
    cfg = cfg or MsdConfig()
    norms = np.linspace(max_norm / n_models, max_norm, n_models)
    errors, conv, needed, final = [], [], [], []
    for norm in norms:
        d = rng.standard_normal(6)
        e = norm * d / np.linalg.norm(d)
        msd = build_msd(cfg, e)
        logs = run_campaign(IlcScheme("nilc"), msd.truth_sim, ControlModels(forward=msd.forward),
                            msd.r, n_trials, seed, stop_below=threshold)
        ok = logs[-1].nrmse < threshold
        errors.append(e)
        conv.append(ok)
        needed.append(logs[-1].trial if ok else -1)
        final.append(logs[-1].nrmse)
    return SweepResult(np.array(errors), np.array(conv), np.array(needed), np.array(final))
