"""Command-line front end: ``pwainv analyze | invert | ilc``."""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, PwaError
from .ilc import (
    ControlModels,
    IlcScheme,
    TrialLog,
    convergence_metrics,
    export_logs_csv,
    export_logs_jsonl,
    nrmse,
    run_campaign,
    trial_rng,
)
from .inversion import assumption_table, detect_global_relative_degree, invert
from .io import read_series_csv, to_jsonable, write_csv
from .pwa import PwaSystem
from .stable_inversion import (
    SwitchingClass,
    decouple,
    lifted_stable_inverse,
    stable_invert_stable_switching,
    stable_invert_unstable_switching,
)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_PARSE = 2
EXIT_MODULE = 3

ILC_SCHEMES = ("ililc", "nilc", "gradient", "ptype", "lfsi", "feedback", "saab", "wang", "sun")


class ParseError(Exception):
    """Malformed or unreadable input file."""


@dataclasses.dataclass(frozen=True)
class RunManifest:
    scenario: str
    scheme: str
    seed: int
    n_trials: int
    output_dir: str
    tool_version: str
    config_hash: str

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True) + "\n",
                        encoding="utf-8")
        return path


def config_hash(doc: dict) -> str:
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def default_out_dir() -> Path:
    return Path(os.environ.get("PWAINV_OUT", "pwainv-out"))


def load_model(path) -> PwaSystem:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read model {path}: {exc}") from exc
    try:
        return PwaSystem.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"invalid model {path}: {exc}") from exc


# -- analyze ---------------------------------------------------------------------------


def analyze_model(sys_: PwaSystem, max_mu: int = 4) -> dict:
    """Relative degree, switching class, inverse spectrum and assumption verdicts."""
    report = detect_global_relative_degree(sys_, max_mu=max_mu)
    out = {"model": sys_.name, "n_locations": sys_.n_locations,
           "mu_components": list(report.mu_components), "mu_hat": report.mu_hat,
           "relative_degree": report.to_dict()}
    if sys_.n_locations == 1:
        out["note"] = "mu_hat from Markov parameters"
    out["assumptions"] = assumption_table(sys_, mu_hat=report.mu_hat)
    out["assumptions"]["A5.7 bounded inverse states"] = "assumed"
    out["assumptions"]["A5.8 decaying reference"] = "assumed"
    try:
        inv = invert(sys_, report.mu_hat)
        dec = decouple(inv)
        eig = [np.linalg.eigvals(inv.matrices(q)[0]) for q in range(inv.system.n_locations)]
        out["switching"] = dec.switching_class.value
        out["inverse_eigenvalues"] = [[complex(v) for v in e] for e in eig]
        out["nmp"] = bool(dec.n_u_modes > 0)
        out["assumptions"]["A5.9 shared decoupling transform"] = "pass"
        out["assumptions"]["A5.10 single-class switching"] = (
            "fail" if dec.switching_class is SwitchingClass.MIXED else "pass")
    except NotImplementedError as exc:
        out["switching"] = "n/a"
        out["note_inverse"] = str(exc)
    except PwaError as exc:
        out["switching"] = "n/a"
        label = ("A5.9 shared decoupling transform" if type(exc).__name__ == "DecouplingFailed"
                 else f"inverse ({type(exc).__name__})")
        out["assumptions"][label] = "fail"
        out["note_inverse"] = str(exc)
    return out


def _fmt_eig(v: complex) -> str:
    if abs(v.imag) < 1e-12:
        return f"{v.real:.6g}"
    return f"{v.real:.6g}{v.imag:+.6g}j"


def cmd_analyze(args) -> int:
    sys_ = load_model(args.model)
    out = analyze_model(sys_, args.max_mu)
    if args.json:
        print(json.dumps(to_jsonable_report(out), indent=1))
    else:
        nmp = out.get("nmp")
        nmp_s = "n/a" if nmp is None else ("yes" if nmp else "no")
        print(f"μ̂={out['mu_hat']}, switching: {out['switching']}, NMP: {nmp_s}")
        print(f"component relative degrees μ_q: {out['mu_components']}")
        if "note" in out:
            print(out["note"])
        for q, eig in enumerate(out.get("inverse_eigenvalues", [])):
            print(f"inverse eigenvalues, location {q}: " + ", ".join(_fmt_eig(v) for v in eig))
        print("assumption checks:")
        for name, verdict in out["assumptions"].items():
            print(f"  {name:45s} {verdict}")
        if "note_inverse" in out:
            print(f"inverse: {out['note_inverse']}")
    if args.strict and any(v == "fail" for v in out["assumptions"].values()):
        return EXIT_FAIL
    return EXIT_OK


def to_jsonable_report(obj):
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, dict):
        return {k: to_jsonable_report(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable_report(v) for v in obj]
    return to_jsonable(obj)


# -- invert ----------------------------------------------------------------------------


def cmd_invert(args) -> int:
    sys_ = load_model(args.model)
    try:
        r = read_series_csv(args.reference, args.column)
    except (OSError, ValueError, IndexError) as exc:
        raise ParseError(f"cannot read reference {args.reference}: {exc}") from exc
    if args.pad:
        r = np.concatenate([np.zeros(args.pad), r, np.zeros(args.pad)])
    mu = detect_global_relative_degree(sys_).mu_hat
    inv = invert(sys_, mu)
    if args.stable:
        dec = decouple(inv)
        if dec.switching_class in (SwitchingClass.STABLE, SwitchingClass.NONE):
            sol = stable_invert_stable_switching(dec, r)
        else:
            sol = stable_invert_unstable_switching(dec, r)
        u, x = np.asarray(sol.u), np.asarray(sol.x_traj)
        res = sol.boundary_residuals
        bounded = float(np.max(np.abs(x)))
    else:
        traj = inv.simulate(np.zeros(sys_.n_x), r)
        u, x = np.ravel(traj.y), np.asarray(traj.x)[:len(r)]
    # forward check from the reconstructed initial state
    fwd = sys_.simulate(x[0], u)
    n_chk = len(r) - mu + 1 if mu else len(r)
    y = np.array([float(np.ravel(sys_.output(fwd.x[k + mu], u[k + mu] if k + mu < len(u) else 0.0,
                                             k + mu))[0]) for k in range(n_chk)])
    err = r[:n_chk] - y
    out = Path(args.out) if args.out else default_out_dir() / "invert"
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "u.csv", ["k [sample]", "u [input units]"],
              ([k, float(v)] for k, v in enumerate(u)))
    write_csv(out / "states.csv", ["k [sample]"] + [f"x{i} [state units]" for i in range(x.shape[1])],
              ([k, *map(float, row)] for k, row in enumerate(x)))
    scale = np.max(np.abs(r)) or 1.0
    print(f"μ̂={mu}, mode: {'stable' if args.stable else 'conventional'}")
    print(f"round-trip NRMSE: {np.sqrt(np.mean(err ** 2)) / scale:.3e}  "
          f"peak error: {np.max(np.abs(err)):.3e}")
    if args.stable:
        # empirical finite-horizon check of bounded, decaying inverse states
        print(f"inverse states: max |x| {bounded:.3e}; unstable modes at start "
              f"{res['xu_start']:.3e}, stable modes at end {res['xs_end']:.3e}")
    print(f"wrote {out / 'u.csv'} and {out / 'states.csv'}")
    return EXIT_OK


# -- ilc -------------------------------------------------------------------------------


@dataclasses.dataclass
class Campaign:
    name: str
    scheme: str
    truth_sim: object
    r: np.ndarray
    ilc: IlcScheme | None
    models: ControlModels
    u0: np.ndarray | None = None


def build_campaign(sf, scheme: str, gain: float | None) -> Campaign:
    """Bind a loaded scenario file to a learning law."""
    from . import scenarios as sc

    cfg = sc.scenario_config(sf)
    if sf.scenario == "printhead":
        ph = sc.build_printhead(cfg)
        filt = ph.filters
        dec = decouple(ph.inverse())
        models = ControlModels(forward=ph.forward,
                               inverse=lifted_stable_inverse(dec, ph.N, ph.mu))
        table = {
            "ililc": lambda: IlcScheme("ililc", filters=filt),
            "nilc": lambda: IlcScheme("nilc", filters=filt),
            "gradient": lambda: IlcScheme("gradient", gain=gain or cfg.gradient_gain, filters=filt),
            "ptype": lambda: IlcScheme("ptype", gain=gain or cfg.ptype_gain, filters=filt),
        }
        if scheme in ("lfsi", "feedback"):
            u0 = (np.zeros(ph.N) if scheme == "feedback"
                  else np.asarray(stable_invert_stable_switching(dec, ph.r).u))
            return Campaign(sf.scenario, scheme, ph.truth_sim, ph.r, None, models, u0)
        if scheme not in table:
            raise ConfigError(f"scheme {scheme!r} is not available for the printhead")
        return Campaign(sf.scenario, scheme, ph.truth_sim, ph.r, table[scheme](), models)
    if sf.scenario == "msd":
        msd = sc.build_msd(cfg, sf.theta_error, sf.truth or "rk4")
        if scheme != "nilc":
            raise ConfigError("the mass-spring-damper scenario supports scheme 'nilc'")
        return Campaign(sf.scenario, scheme, msd.truth_sim, msd.r, IlcScheme("nilc"),
                        ControlModels(forward=msd.forward))
    app = sc.build_appendix_lti(cfg)
    laws = {name: (g1, g0) for name, g1, g0 in cfg.schemes}
    if scheme == "ililc":
        from .inversion import invert_mu1

        dec = decouple(invert_mu1(app.system))
        models = ControlModels(forward=app.forward,
                               inverse=lifted_stable_inverse(dec, app.N, app.mu))
        return Campaign(sf.scenario, scheme, app.truth_sim, app.r, IlcScheme("ililc"), models)
    if scheme in laws:
        M = app.learning_law_matrix(*laws[scheme])
        return Campaign(sf.scenario, scheme, app.truth_sim, app.r,
                        IlcScheme("fixed", matrix=M), ControlModels())
    raise ConfigError(f"scheme {scheme!r} is not available for the appendix system")


def run_bound_campaign(camp: Campaign, n_trials: int, seed: int) -> list[TrialLog]:
    if camp.ilc is None:
        # learning-free run: the same input every trial
        logs = []
        for trial in range(n_trials):
            y = np.asarray(camp.truth_sim(camp.u0, trial_rng(seed, trial)), dtype=float)
            e = camp.r - y
            logs.append(TrialLog(trial=trial, u=camp.u0.copy(), y=y, e=e, nrmse=nrmse(e, camp.r),
                                 peak_error=float(np.max(np.abs(e))), condition=None,
                                 seeds={"seed": seed, "trial": trial, "bit_generator": "Philox"}))
        return logs
    return run_campaign(camp.ilc, camp.truth_sim, camp.models, camp.r, n_trials, seed, camp.u0)


def _scenario_doc(path) -> dict:
    from .scenarios import read_scenario_document

    try:
        return read_scenario_document(path)
    except (OSError, ValueError) as exc:
        raise ParseError(f"cannot read scenario {path}: {exc}") from exc


def _run_one(path: str, scheme_arg: str | None, trials_arg: int | None, seed_arg: int | None,
             gain: float | None, out_root: str) -> tuple[str, str]:
    from .scenarios import load_scenario

    doc = _scenario_doc(path)
    sf = load_scenario(path)
    scheme = scheme_arg or sf.scheme or "ililc"
    n_trials = trials_arg if trials_arg is not None else (sf.trials or 10)
    seed = seed_arg if seed_arg is not None else (sf.seed if sf.seed is not None else 0)
    gain = gain if gain is not None else sf.gain
    if n_trials < 1:
        raise ConfigError("trials must be positive")
    name = sf.name or Path(path).stem
    out = Path(out_root) / name / scheme
    effective = {"scenario": doc, "scheme": scheme, "trials": n_trials, "seed": seed,
                 "gain": gain}
    manifest = RunManifest(scenario=name, scheme=scheme, seed=seed, n_trials=n_trials,
                           output_dir=str(out), tool_version=__version__,
                           config_hash=config_hash(effective))
    manifest.write(out / "manifest.json")

    camp = build_campaign(sf, scheme, gain)
    logs = run_bound_campaign(camp, n_trials, seed)
    export_logs_csv(logs, out / "trials.csv")
    export_logs_jsonl(logs, out / "trials.jsonl")
    write_csv(out / "final_trial.csv",
              ["k [sample]", "r [output units]", "y [output units]", "e [output units]",
               "u [input units]"],
              ([k, float(camp.r[k]), float(logs[-1].y[k]), float(logs[-1].e[k]),
                float(logs[-1].u[k])] for k in range(len(camp.r))))

    lines = [f"scenario: {name}  scheme: {scheme}  seed: {seed}",
             f"{'trial':>5}  {'NRMSE':>10}  {'Peak Error Magnitude':>20}  notes"]
    for log in logs:
        note = "; ".join(dict.fromkeys(log.notes))
        if log.condition is not None:
            note = (f"condition {log.condition:.2e}" + (f"; {note}" if note else ""))
        lines.append(f"{log.trial:>5}  {log.nrmse:>10.3e}  {log.peak_error:>20.3e}  {note}")
    nonfinite = [log.trial for log in logs if log.nonfinite]
    if nonfinite:
        lines.append(f"first non-finite trial: {nonfinite[0]}")
    if len(logs) >= 2:
        m = convergence_metrics(logs)
        lines.append(f"converged: {m.converged}  l*: {m.l_star}  "
                     f"mean transient rate: {m.mean_transient_rate:.3g}")
    lines.append(f"logs: {out}")
    return name, "\n".join(lines)


def cmd_ilc(args) -> int:
    out_root = str(Path(args.out) if args.out else default_out_dir())
    jobs = [(p, args.scheme, args.trials, args.seed, args.gain, out_root) for p in args.scenario]
    if args.jobs > 1 and len(jobs) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, *zip(*jobs)))
    else:
        results = [_run_one(*j) for j in jobs]
    for _, text in results:
        print(text)
    return EXIT_OK


# -- entry point -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pwainv", description=__doc__)
    p.add_argument("--version", action="version", version=f"pwainv {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="relative degree, switching class and assumption checks")
    a.add_argument("model", help="model file (pwa-model/1 JSON)")
    a.add_argument("--strict", action="store_true", help="exit 1 if any check fails")
    a.add_argument("--json", action="store_true", help="print the report as JSON")
    a.add_argument("--max-mu", type=int, default=4)
    a.set_defaults(func=cmd_analyze)

    i = sub.add_parser("invert", help="invert a model along a reference")
    i.add_argument("model")
    i.add_argument("reference", help="CSV with a header row; desired outputs y[mu], y[mu+1], ...")
    i.add_argument("--column", default=-1, type=lambda s: int(s) if s.lstrip("-").isdigit() else s)
    i.add_argument("--stable", action="store_true", help="bounded (stable) inversion")
    i.add_argument("--pad", type=int, default=0, help="zero samples added at both ends")
    i.add_argument("--out", help="output directory (default $PWAINV_OUT/invert)")
    i.set_defaults(func=cmd_invert)

    c = sub.add_parser("ilc", help="run learning campaigns on scenario files")
    c.add_argument("scenario", nargs="+", help="scenario/1 JSON or TOML files")
    c.add_argument("--scheme", choices=ILC_SCHEMES)
    c.add_argument("--trials", type=int)
    c.add_argument("--seed", type=int, help="random seed (default 0)")
    c.add_argument("--gain", type=float, help="P-type gain or gradient step size")
    c.add_argument("--jobs", type=int, default=1, help="scenarios run in parallel")
    c.add_argument("--out", help="output root (default $PWAINV_OUT or ./pwainv-out)")
    c.set_defaults(func=cmd_ilc)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except PwaError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_MODULE


if __name__ == "__main__":
    sys.exit(main())
