"""Command-line front end: ``setiss <command> --config <file> [--output-dir <dir>]``.

Exit codes: 0 success or pass, 1 verdict failure, 2 usage or config error.
Verdict JSON files are deterministic for a fixed config; wall-clock data go
to ``meta.json`` only.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from . import artifacts as io
from . import gains as G
from . import razumikhin as R
from . import systems as S
from .dde import CaseFailure, DisturbanceSignal, NonFiniteState, integrate, integrate_lockstep
from .sets import HistoryWindow, SetError, set_from_name

COMMANDS = ("simulate", "check-razumikhin", "delay-margin", "iss-monitor", "reproduce-example")
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config


DEFAULTS = {
    "oscillator": {"initial_state": [1.0, 1.0], "horizon": 300.0, "amplitudes": [0.01, 0.05, 0.1]},
    "stuart_landau": {"initial_state": [1.5, 0.0], "horizon": 100.0, "amplitudes": [0.01, 0.05]},
}


@dataclass
class ExperimentConfig:
    command: str
    system: str
    params: dict
    delayed: bool
    delay: float | str
    step: float
    horizon: float
    initial_state: list
    disturbance: dict
    set_name: str | None
    box: dict
    samples: int
    seed: int
    output_dir: str
    csv_max_rows: int
    margin: dict
    monitor: dict
    raw: dict = field(repr=False, default_factory=dict)


def load_schema() -> dict:
    return json.loads(resources.files("setiss").joinpath("config_schema.json").read_text())


def _reject_constant(name):
    raise ConfigError(f"non-finite number {name} is not allowed")


def parse_config(text: str, command: str) -> ExperimentConfig:
    try:
        raw = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    validator = jsonschema.Draft202012Validator(load_schema())
    errs = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errs:
        msgs = [f"{'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}" for e in errs]
        raise ConfigError("config does not match schema:\n  " + "\n  ".join(msgs))
    if "command" in raw and raw["command"] != command:
        raise ConfigError(f"config is for command {raw['command']!r}, not {command!r}")
    name = raw["system"]["name"]
    dflt = DEFAULTS[name]
    mon = dict(raw.get("monitor", {}))
    mon.setdefault("mu_offset", 1e-3)
    mon.setdefault("slack", 0.05)
    mon.setdefault("transient_fraction", 0.5)
    mon.setdefault("amplitudes", dflt["amplitudes"])
    mon.setdefault("t_on", 0.0)
    mar = dict(raw.get("margin", {}))
    mar.setdefault("mu", 1e-3)
    mar.setdefault("Delta", 2.0)
    mar.setdefault("tol", 1e-7)
    if mar["mu"] >= mar["Delta"]:
        raise ConfigError("margin: mu must be below Delta")
    x0 = raw.get("initial_state", dflt["initial_state"])
    if len(x0) != 2:
        raise ConfigError("initial_state: both built-in systems are two-dimensional")
    return ExperimentConfig(
        command=command, system=name, params=dict(raw["system"].get("params", {})),
        delayed=bool(raw["system"].get("delayed", True)), delay=raw.get("delay", 0.0),
        step=float(raw.get("step", 1e-3)), horizon=float(raw.get("horizon", dflt["horizon"])),
        initial_state=list(map(float, x0)), disturbance=dict(raw.get("disturbance", {"kind": "zero"})),
        set_name=raw.get("set"), box=dict(raw.get("box", {})), samples=int(raw.get("samples", 100_000)),
        seed=int(raw.get("seed", 0)), output_dir=raw.get("output_dir", "setiss_out"),
        csv_max_rows=int(raw.get("csv_max_rows", 10_001)), margin=mar, monitor=mon, raw=raw,
    )


# ---------------------------------------------------------------------------
# building blocks


@dataclass
class Bundle:
    name: str
    params: object
    cert: R.RazumikhinCertificate
    sampler: object
    plant: callable  # (delay) -> DelaySystem
    disturbance_dim: int


def build_bundle(cfg: ExperimentConfig) -> Bundle:
    cached = cfg.raw.get("__bundle__")
    if cached is not None:
        return cached
    bundle = _build_bundle(cfg)
    cfg.raw["__bundle__"] = bundle
    return bundle


def _build_bundle(cfg: ExperimentConfig) -> Bundle:
    pr = dict(cfg.params)
    try:
        if cfg.system == "oscillator":
            for key in ("stiffness", "eta"):
                if key in pr:
                    pr[key] = G.from_json(pr[key])
            p = S.OscillatorParams(**pr)
            cert = S.oscillator_certificate(p)
            samp = S.oscillator_sampler(p, cfg.seed, cfg.box.get("state_radius", S.CERT_BOX),
                                        cfg.box.get("theta_max", 1.0), cfg.box.get("w_max", 1.0))
            plant = lambda d: S.oscillator_system(p, cfg.delayed, d)  # noqa: E731
            return Bundle("oscillator", p, cert, samp, plant, 1)
        p = S.StuartLandauParams(**pr)
        cert = S.stuart_landau_certificate(p)
        samp = S.stuart_landau_sampler(p, cfg.seed, cfg.box.get("state_radius", S.CERT_BOX),
                                       cfg.box.get("w_max", 1.0), cfg.box.get("theta_max", 1.0))
        plant = lambda d: S.stuart_landau_system(p, cfg.delayed, d)  # noqa: E731
        return Bundle("stuart_landau", p, cert, samp, plant, 2)
    except (TypeError, ValueError, G.GainError) as exc:
        raise ConfigError(f"system/params: {exc}") from None


def target_set(cfg: ExperimentConfig, bundle: Bundle):
    if cfg.set_name is None:
        return bundle.cert.set
    try:
        return set_from_name(cfg.set_name, 2)
    except SetError as exc:
        raise ConfigError(f"set: {exc}") from None


def margin_gains(cfg: ExperimentConfig, bundle: Bundle | None):
    g = cfg.margin.get("gains")
    if g is not None:
        try:
            gt = G.from_json(g["gamma_theta"])
            g1 = G.from_json(g["gamma1"])
            a1 = G.from_json(g["alpha1"]) if "alpha1" in g else G.identity()
            a2 = G.from_json(g["alpha2"]) if "alpha2" in g else G.identity()
        except (G.GainError, KeyError, TypeError) as exc:
            raise ConfigError(f"margin/gains: {exc}") from None
        return gt, g1, a1, a2
    c = bundle.cert
    return c.extras["gamma_theta"], c.extras["gamma1"], c.alpha1, c.alpha2


def compute_margin(cfg, bundle) -> R.MarginReport:
    gt, g1, a1, a2 = margin_gains(cfg, bundle)
    return R.delay_margin(gt, g1, a1, a2, cfg.margin["mu"], cfg.margin["Delta"], cfg.margin["tol"])


def resolve_delay(cfg, bundle) -> tuple[float, R.MarginReport | None]:
    if cfg.delay == "half_margin":
        rep = compute_margin(cfg, bundle)
        if rep.status != "converged":
            raise ConfigError(f"delay 'half_margin' needs a finite margin, got status {rep.status}")
        return rep.delta_star / 2, rep
    return float(cfg.delay), None


def disturbance(cfg, bundle) -> DisturbanceSignal:
    d = dict(cfg.disturbance)
    d.setdefault("dim", bundle.disturbance_dim)
    try:
        w = DisturbanceSignal.from_dict(d, bundle.disturbance_dim)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"disturbance: {exc}") from None
    if w.dim != bundle.disturbance_dim:
        raise ConfigError(f"disturbance: system expects dimension {bundle.disturbance_dim}")
    return w


def step_input(amp: float, dim: int, t_on: float) -> DisturbanceSignal:
    # step of Euclidean size amp along the first axis
    vec = np.zeros(dim)
    vec[0] = amp
    return DisturbanceSignal.step(t_on, vec, dim)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg, out: Path) -> tuple[int, dict]:
    bundle = build_bundle(cfg)
    delay, rep = resolve_delay(cfg, bundle)
    w = disturbance(cfg, bundle)
    A = target_set(cfg, bundle)
    sys_ = bundle.plant(delay)
    hist = HistoryWindow.constant(cfg.initial_state, sys_.delay)
    try:
        traj = integrate(sys_, hist, w, cfg.horizon, cfg.step)
        status = "ok"
    except NonFiniteState as exc:
        traj, status = exc.trajectory, "diverged"
    rows = io.write_trajectory_csv(out / "trajectory.csv", traj, A, cfg.csv_max_rows)
    payload = {"command": "simulate", "system": sys_.name, "delay": sys_.delay, "h": traj.h,
               "h_requested": traj.h_requested, "horizon": cfg.horizon, "status": status,
               "final_state": traj.states[-1], "final_dist_A": float(A.distance(traj.states[-1])),
               "csv_rows": rows, "notes": list(traj.notes), "pass": status == "ok"}
    if rep is not None:
        payload["margin"] = rep.to_dict()
    io.write_json(out / "verdict.json", payload)
    return (EXIT_OK if status == "ok" else EXIT_FAIL), payload


def _falsify_stage(bundle: Bundle, n: int) -> dict:
    cert = bundle.cert
    theta_sys = cert.extras["theta_system"]
    try:
        v = R.falsify_theorem2(cert, theta_sys, bundle.sampler, n)
        res = v.to_dict()
    except R.PremiseNeverSampled as exc:
        res = {"kind": "theorem2", "pass": False, "n": n, "premise_hits": 0, "reason": str(exc)}
    return res


def _mutant_stage(bundle: Bundle, n: int, factor: float = 10.0) -> dict:
    cert = bundle.cert
    mut = R.RazumikhinCertificate(**{**cert.__dict__, "alpha3": G.scale(cert.alpha3, factor)})
    try:
        v = R.falsify_theorem2(mut, cert.extras["theta_system"], bundle.sampler, n)
        caught = not v.passed
        d = v.to_dict()
    except R.PremiseNeverSampled:
        caught, d = False, {"premise_hits": 0}
    return {"pass": caught, "factor": factor, "counterexample_found": caught,
            "premise_hits": d.get("premise_hits")}


def _sandwich_stage(bundle: Bundle, seed: int) -> dict:
    cert = bundle.cert
    if "sandwich_annulus" in cert.extras:
        r_in, r_out = cert.extras["sandwich_annulus"]
        samp = S.annulus_sampler(r_in, r_out, seed)
        dom = {"annulus": [r_in, r_out]}
    else:
        b = cert.extras["sandwich_box"]
        from .sampling import SobolSampler, box
        samp = SobolSampler((box("x", [-b, -b], [b, b]),), seed)
        dom = {"box": [-b, b]}
    v = R.check_sandwich(cert, samp, 2 ** 16)
    return {**v.to_dict(), "domain": dom}


def cmd_check(cfg, out: Path) -> tuple[int, dict]:
    bundle = build_bundle(cfg)
    sandwich = _sandwich_stage(bundle, cfg.seed)
    fal = _falsify_stage(bundle, cfg.samples)
    ok = sandwich["pass"] and fal["pass"]
    payload = {"command": "check-razumikhin", "system": bundle.name, "sandwich": sandwich,
               "implication": fal, "sampler": bundle.sampler.describe(), "pass": ok}
    io.write_json(out / "verdict.json", payload)
    return (EXIT_OK if ok else EXIT_FAIL), payload


def cmd_margin(cfg, out: Path) -> tuple[int, dict]:
    bundle = None if cfg.margin.get("gains") is not None else build_bundle(cfg)
    rep = compute_margin(cfg, bundle)
    ok = rep.status in ("converged", "unbounded")
    payload = {"command": "delay-margin", "system": cfg.system if bundle else "custom_gains",
               **rep.to_dict(), "pass": ok}
    io.write_json(out / "margin.json", payload)
    return (EXIT_OK if ok else EXIT_FAIL), payload


def _monitor_runs(cfg, bundle, A, delay: float, amplitudes, tag: str, out: Path) -> list:
    sys_ = bundle.plant(delay)
    hist = HistoryWindow.constant(cfg.initial_state, sys_.delay)
    cases = [(hist, step_input(a, bundle.disturbance_dim, cfg.monitor["t_on"])) for a in amplitudes]
    trajs = integrate_lockstep(sys_, cases, cfg.horizon, cfg.step)
    gain = bundle.cert.extras["gamma"]
    runs = []
    for a, tr in zip(amplitudes, trajs):
        name = f"{tag}_w{a:g}"
        rec = {"amplitude": a, "delay": sys_.delay, "csv": f"{name}.csv"}
        if isinstance(tr, CaseFailure):
            part = tr.trajectory
            if part is not None:
                io.write_trajectory_csv(out / rec["csv"], part, A, cfg.csv_max_rows)
            rec.update({"pass": False, "status": "diverged", "error": str(tr.error)})
            runs.append(rec)
            continue
        io.write_trajectory_csv(out / rec["csv"], tr, A, cfg.csv_max_rows)
        v = R.iss_monitor(tr, A, gain, a, cfg.monitor["mu_offset"], cfg.monitor["transient_fraction"],
                          cfg.monitor["slack"])
        io.write_envelope_csv(out / f"{name}_envelope.csv", v.envelope)
        rec.update({"status": "ok", "h": tr.h, **v.to_dict()})
        runs.append(rec)
    return runs


def cmd_monitor(cfg, out: Path) -> tuple[int, dict]:
    bundle = build_bundle(cfg)
    delay, rep = resolve_delay(cfg, bundle)
    A = target_set(cfg, bundle)
    if cfg.disturbance.get("kind", "zero") in ("zero", "step", "constant") and "amplitudes" not in cfg.monitor:
        amp = float(np.linalg.norm(np.atleast_1d(cfg.disturbance.get("amplitude", 0.0))))
        amps = [amp]
    else:
        amps = list(cfg.monitor["amplitudes"])
    runs = _monitor_runs(cfg, bundle, A, delay, amps, "monitor", out)
    ok = all(r["pass"] for r in runs)
    payload = {"command": "iss-monitor", "system": bundle.name, "delay": delay, "runs": runs, "pass": ok}
    if rep is not None:
        payload["margin"] = rep.to_dict()
    io.write_json(out / "verdict.json", payload)
    return (EXIT_OK if ok else EXIT_FAIL), payload


def reproduce_example(cfg, out: Path) -> tuple[int, dict]:
    """Certificate, falsification, L, margin, then delayed runs against the no-delay gain."""
    stages: dict[str, dict] = {}
    try:
        bundle = build_bundle(cfg)
        stages["certificate"] = {**_sandwich_stage(bundle, cfg.seed)}
    except R.EnvelopeFitFailed as exc:
        stages["certificate"] = {"pass": False, "error": str(exc)}
        return _finish_report(cfg, out, stages)
    stages["falsify"] = _falsify_stage(bundle, cfg.samples)
    stages["mutant"] = _mutant_stage(bundle, cfg.samples)
    L = float(bundle.cert.extras["L"])
    stages["lipschitz"] = {"pass": L > 0 and math.isfinite(L), "L": L}
    rep = compute_margin(cfg, bundle)
    stages["margin"] = {**rep.to_dict(), "pass": rep.status == "converged" and rep.delta_star > 0}
    A = target_set(cfg, bundle)
    if cfg.delay == "half_margin" or "delay" not in cfg.raw:
        if rep.status != "converged":
            stages["simulate"] = {"pass": False, "error": "no finite margin to halve"}
            return _finish_report(cfg, out, stages)
        delayed = rep.delta_star / 2
    else:
        delayed = float(cfg.delay)
    amps = list(cfg.monitor["amplitudes"])
    runs = []
    try:
        for tag, d in (("nodelay", 0.0), ("delayed", delayed)):
            runs.extend(_monitor_runs(cfg, bundle, A, d, amps, tag, out))
        stages["monitor"] = {"pass": all(r["pass"] for r in runs), "runs": runs,
                             "delays": [0.0, delayed]}
    except (NonFiniteState, ValueError) as exc:
        stages["monitor"] = {"pass": False, "error": str(exc), "runs": runs}
    return _finish_report(cfg, out, stages)


def _finish_report(cfg, out: Path, stages: dict) -> tuple[int, dict]:
    ok = all(s.get("pass", False) for s in stages.values())
    payload = {"command": "reproduce-example", "system": cfg.system, "seed": cfg.seed,
               "stages": stages, "pass": ok}
    io.write_json(out / "report.json", payload)
    return (EXIT_OK if ok else EXIT_FAIL), payload


HANDLERS = {
    "simulate": cmd_simulate,
    "check-razumikhin": cmd_check,
    "delay-margin": cmd_margin,
    "iss-monitor": cmd_monitor,
    "reproduce-example": reproduce_example,
}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="setiss", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="experiment JSON file")
    ap.add_argument("--output-dir", help="overrides output_dir from the config")
    return ap


def run(command: str, config_path: str, output_dir: str | None = None, stderr=None) -> int:
    stderr = sys.stderr if stderr is None else stderr
    try:
        text = Path(config_path).read_text()
    except OSError as exc:
        print(f"setiss: cannot read config: {exc}", file=stderr)
        return EXIT_USAGE
    try:
        cfg = parse_config(text, command)
        out = Path(output_dir or cfg.output_dir)
        if command != "delay-margin" or cfg.margin.get("gains") is None:
            # surface parameter errors before touching the disk
            bundle = build_bundle(cfg)
            target_set(cfg, bundle)
            if command == "simulate":
                disturbance(cfg, bundle)
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.time()
        code, _ = HANDLERS[command](cfg, out)
    except ConfigError as exc:
        print(f"setiss: config error: {exc}", file=stderr)
        return EXIT_USAGE
    meta = {"command": command, "config": str(config_path), "version": __version__,
            "started": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(t0)),
            "elapsed_s": round(time.time() - t0, 3), "exit_code": code}
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    return run(args.command, args.config, args.output_dir)


if __name__ == "__main__":
    sys.exit(main())
