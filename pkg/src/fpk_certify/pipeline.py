"""Pipelines behind the command line: bounds, simulate, verify and report.

Every artifact except ``metadata.json`` is a pure function of the problem
file, so repeated runs give byte-identical files.
"""

import json
import logging
import math
import platform
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .coefficients import LyapunovExpression, Region, certify_dissipativity, certify_linear_growth
from .errors import FPKError, PreconditionError
from .lyapunov import (
    bound_case_i,
    exponential_growth_constants,
    moment_envelope_exponential,
    moment_envelope_power,
    power_growth_constants,
    time_weighted_exponential_envelope,
)
from .solver import Grid, InitialMeasure, SolverConfig, project_initial_measure, run, weighted_moment
from .verifier import (
    EnvelopeSpec,
    blowup_exponent,
    check_envelope,
    config_digest,
    envelope_channel,
    fit_envelope_constants,
    reliable_times,
)

log = logging.getLogger("fpk_certify")

MODES = ("bounds", "simulate", "verify", "report")


@dataclass
class PipelineResult:
    mode: str
    passed: bool
    out_dir: Path
    artifacts: list
    summary: dict

    @property
    def exit_code(self):
        return 0 if self.passed else 1


# ----------------------------------------------------------------------------------------
# Shared setup
# ----------------------------------------------------------------------------------------


def build_grid(spec):
    radius, cells = spec.grid["radius"], spec.grid["cells"]
    d = spec.dimension
    return Grid(radius if isinstance(radius, list) else [radius] * d, cells if isinstance(cells, list) else [cells] * d)


def build_initial(spec, grid):
    init = spec.initial
    kind = init["kind"]
    zeros = [0.0] * spec.dimension
    if kind == "gaussian":
        measure = InitialMeasure.gaussian(init.get("mean", zeros), init.get("variance", 1.0))
    elif kind == "point_mass":
        measure = InitialMeasure.point_mass(init.get("center", zeros), init.get("width"))
    else:
        measure = InitialMeasure.grid_function(np.ones(grid.shape))
    return project_initial_measure(measure, grid)


def solver_config(spec, **overrides):
    s = spec.solver
    kw = dict(
        dt=s.get("dt"),
        cfl=s["cfl"],
        scheme=s["scheme"],
        boundary=s["boundary"],
        reaction=s["reaction"],
        end_time=s["end_time"],
        snapshot_times=spec.snapshot_times(),
    )
    kw.update(overrides)
    return SolverConfig(**kw)


def _digest(spec, mode, **extra):
    d = spec.to_dict()
    d.pop("output_dir", None)
    d.update(mode=mode, **extra)
    return config_digest(d)


def _write_metadata(out, mode, spec, started, extra=None):
    meta = {
        "mode": mode,
        "started": started,
        "finished": time.time(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "spec_digest": spec.digest if spec is not None else None,
    }
    meta.update(extra or {})
    io.write_json(out / "metadata.json", meta)


# ----------------------------------------------------------------------------------------
# bounds
# ----------------------------------------------------------------------------------------


def _certify(spec, field_, expr):
    lyap = spec.lyapunov
    if "c1" in lyap and "c2" in lyap:
        return {"c1": lyap["c1"], "c2": lyap["c2"], "certified": True, "source": "problem file"}
    region = Region([0.0] * spec.dimension, lyap["certify_radius"], (0.0, 1.0))
    cert = certify_dissipativity(expr, field_, lyap["k"], region, strategy="tail")
    out = {"c1": cert.c1, "c2": cert.c2, "certified": cert.certified, "source": "sampled"}
    out.update(cert.margin_report)
    return out


def _slope(t, y):
    """d y / d log t on the (log-spaced) time grid."""
    return np.gradient(np.asarray(y, dtype=float), np.log(t))


def _uncertified(columns, constants, name, cert, n, suffixes):
    # no valid dissipativity constants: the bound does not apply
    for suf in suffixes:
        columns[name + suf] = [math.nan] * n
    constants[name] = dict(cert)


def compute_bounds(spec):
    """Columns of t versus each selected bound, plus the constants used."""
    field_ = spec.coefficient_field()
    lyap, sel = spec.lyapunov, spec.bounds["select"]
    t = np.geomspace(spec.bounds["t_min"], spec.bounds["t_max"], spec.bounds["points"])
    r, k, alpha, delta = lyap.get("r"), lyap.get("k"), lyap["alpha"], lyap["delta"]
    columns, constants, certified = {}, {}, True

    for name in sel:
        if name == "case_i":
            expr = LyapunovExpression.exponential(alpha, r) if lyap["function"] == "exponential" else LyapunovExpression.power(r)
            region = Region([0.0] * spec.dimension, lyap["certify_radius"], (0.0, 1.0))
            growth = certify_linear_growth(expr, field_, region)
            grid = build_grid(spec)
            m = weighted_moment(build_initial(spec, grid), lambda x: expr.lyapunov_value(x))
            vals = [bound_case_i(growth.constant, float(s), m) for s in t]
            columns[name] = vals
            columns[name + "_slope"] = _slope(t, np.log(vals))
            constants[name] = {"C": growth.constant, "initial_moment": m, "worst_point": list(growth.worst_point)}
        elif name == "moment_power":
            cert = _certify(spec, field_, LyapunovExpression.power(r))
            if not cert["certified"]:
                _uncertified(columns, constants, name, cert, len(t), ('', '_slope',))
                certified = False
                continue
            add, cg = power_growth_constants(cert["c1"], cert["c2"], r, k)
            vals = [moment_envelope_power(r, k, cg, delta, float(s), additive=add) for s in t]
            columns[name] = vals
            columns[name + "_slope"] = _slope(t, np.log(vals))
            constants[name] = dict(cert, additive=add, c_G=cg, predicted_slope=-r / (k - 2))
            certified &= cert["certified"]
        elif name == "moment_exponential":
            cert = _certify(spec, field_, LyapunovExpression.exponential(alpha, r))
            if not cert["certified"]:
                _uncertified(columns, constants, name, cert, len(t), ('_log', '_slope', '_loglog_slope', '_constant_extension',))
                certified = False
                continue
            add, cg = exponential_growth_constants(cert["c1"], cert["c2"], alpha, r, k)
            env = [moment_envelope_exponential(r, k, alpha, cg, delta, float(s), additive=add) for s in t]
            logs = np.array([e.log_value for e in env])
            columns[name + "_log"] = logs
            columns[name + "_slope"] = _slope(t, logs)
            with np.errstate(invalid="ignore", divide="ignore"):
                columns[name + "_loglog_slope"] = _slope(t, np.log(np.where(logs > 0, logs, np.nan)))
            columns[name + "_constant_extension"] = [int(e.constant_extension) for e in env]
            constants[name] = dict(cert, additive=add, c_G=cg, predicted_loglog_slope=-r / (k - r))
            certified &= cert["certified"]
        elif name == "time_weighted":
            beta = lyap["beta"]
            cert = _certify(spec, field_, LyapunovExpression.exponential_with_gradient(alpha, r))
            if not cert["certified"]:
                _uncertified(columns, constants, name, cert, len(t), ('_log', '_slope', '_weight_rate',))
                certified = False
                continue
            add, cg = power_growth_constants(cert["c1"], cert["c2"], r, k)
            env = [time_weighted_exponential_envelope(r, k, alpha, beta, cg, float(s), additive=add) for s in t]
            logs = np.array([e.log_value for e in env])
            columns[name + "_log"] = logs
            columns[name + "_slope"] = _slope(t, logs)
            columns[name + "_weight_rate"] = [e.weight_rate for e in env]
            constants[name] = dict(
                cert, additive=add, c_G=cg, delta=env[0].delta, c4=env[0].c4, exponents=list(env[0].exponents)
            )
            certified &= cert["certified"]
    return t, columns, constants, certified


def run_bounds(spec, out):
    t, columns, constants, certified = compute_bounds(spec)
    names = list(columns)
    rows = ([s] + [columns[n][i] for n in names] for i, s in enumerate(t))
    io.write_csv(out / "bounds.csv", ["t"] + names, rows)
    io.write_json(
        out / "constants.json",
        {"constants": constants, "certified": certified, "config_digest": _digest(spec, "bounds")},
    )
    return PipelineResult("bounds", bool(certified), out, ["bounds.csv", "constants.json"], {"certified": certified})


# ----------------------------------------------------------------------------------------
# simulate
# ----------------------------------------------------------------------------------------


def run_simulate(spec, out):
    field_ = spec.coefficient_field()
    grid = build_grid(spec)
    state = build_initial(spec, grid)
    config = solver_config(spec)
    result = run(state, field_, config)
    snap_dir = out / "snapshots"
    snap_dir.mkdir(parents=True, exist_ok=True)
    files = []
    index = []
    for i, s in enumerate(result.snapshots):
        stem = f"snapshot_{i:04d}"
        io.write_snapshot_csv(snap_dir / f"{stem}.csv", s)
        io.write_snapshot_binary(snap_dir / f"{stem}.bin", s)
        files += [f"snapshots/{stem}.csv", f"snapshots/{stem}.bin"]
        index.append([i, s.t, s.mass()])
    io.write_csv(out / "snapshots.csv", ["index", "t", "mass"], index)
    io.write_ledger_csv(out / "ledger.csv", result.ledger)
    summary = {
        "steps": result.steps,
        "dt": result.dt,
        "final_time": result.final.time,
        "final_mass": result.final.mass(),
        "initial_mass": state.mass(),
        "snapshot_count": len(result.snapshots),
        "initial": state.metadata,
        "grid": {"extents": list(grid.extents), "cells": list(grid.cells)},
        "config_digest": _digest(spec, "simulate"),
    }
    io.write_json(out / "summary.json", summary)
    return PipelineResult("simulate", True, out, files + ["snapshots.csv", "ledger.csv", "summary.json"], summary)


# ----------------------------------------------------------------------------------------
# verify
# ----------------------------------------------------------------------------------------


def envelope_from_spec(spec):
    v = spec.verify
    lyap = spec.lyapunov
    r = v.get("r", lyap.get("r"))
    if "alpha_prime" not in v or r is None:
        raise PreconditionError("verify needs verify.alpha_prime and an exponent r")
    if v["form"] == "blowup":
        q = v.get("q")
        if q is None:
            k = lyap.get("k")
            if k is None or not k > r:
                raise PreconditionError("verify.q is missing and r/(k-r) is undefined")
            q = r / (k - r)
        return EnvelopeSpec("blowup", v["alpha_prime"], r, q=q)
    return EnvelopeSpec("timeweighted", v["alpha_prime"], r, beta=v.get("beta", lyap.get("beta")))


def run_verify(spec, out, slack=None):
    """Fit on the reliable window at N, then check the envelope at N and 2N."""
    slack = spec.verify["slack"] if slack is None else float(slack)
    field_ = spec.coefficient_field()
    env = envelope_from_spec(spec)
    grid = build_grid(spec)
    config = solver_config(spec)
    coarse = run(build_initial(spec, grid), field_, config)
    fine_dt = run(build_initial(spec, grid), field_, solver_config(spec, dt=coarse.dt / 2))
    ch_coarse = envelope_channel(coarse.snapshots, env)
    ch_fine = envelope_channel(fine_dt.snapshots, env)
    ok = reliable_times(ch_coarse, ch_fine, spec.verify["reliability_tol"])
    notes = []
    if not ok:
        raise PreconditionError("no snapshot passed the reliability test; refine the grid or time step")
    t_range = (ok[0], config.end_time)
    fit = fit_envelope_constants(coarse.snapshots, env, t_range)
    if not fit.success:
        raise PreconditionError(f"envelope fit failed: {fit.message}")
    digest = _digest(spec, "verify", slack=slack)
    report = check_envelope(coarse.snapshots, fit.envelope, slack, t_range, {"digest": digest})
    refined = build_grid(spec).refined()
    fine = run(build_initial(spec, refined), field_, config)
    report_fine = check_envelope(fine.snapshots, fit.envelope, slack, t_range)
    if report_fine.max_ratio > report.max_ratio:
        report.max_ratio, report.witness = report_fine.max_ratio, dict(report_fine.witness, grid="2N")
    report.passed = bool(report.passed and report_fine.passed)
    notes.append(f"fit on {fit.snapshot_count} reliable snapshots; checked on N and 2N")

    channel_rows = []
    fitted = fit.envelope
    for c in ch_coarse:
        env_val = fitted.log_c4 + fitted.temporal_coefficient() * fitted.temporal_feature(c.t)
        channel_rows.append([c.t, c.value, env_val, int(c.t in ok), int(c.at_core_edge)])
    if env.form == "blowup":
        chan = [c for c in ch_coarse if c.t in ok]
        try:
            est = blowup_exponent(chan, fitted.log_c4, min_excess=spec.verify["min_excess"])
            d = est.to_dict()
            d.update(name="q", target=env.q, relative_error=abs(est.exponent - env.q) / env.q)
            report.regressions.append(d)
        except FPKError as exc:
            notes.append(f"q regression skipped: {exc}")
    report.notes = notes
    io.write_json(out / "report.json", json.loads(report.to_json()))
    io.write_csv(out / "channel.csv", ["t", "log_channel", "log_envelope_time_part", "reliable", "core_edge"], channel_rows)
    lines = [
        f"verification {'PASSED' if report.passed else 'FAILED'} (slack {slack:g})",
        f"envelope form {env.form}: alpha'={env.alpha_prime:g}, r={env.r:g}"
        + (f", q={env.q:g}" if env.form == "blowup" else f", beta={env.beta:g}"),
        "constants: " + ", ".join(f"{k}={io.fmt(v)}" for k, v in sorted(report.constants.items())),
        f"max ratio rho/envelope: {io.fmt(report.max_ratio)} at t={io.fmt(report.witness.get('t', math.nan))}",
        f"time window: [{io.fmt(t_range[0])}, {io.fmt(t_range[1])}]",
    ]
    for reg in report.regressions:
        lines.append(f"regression {reg['name']}: {reg['exponent']:.6g} +- {reg['stderr']:.2g} (target {reg['target']:g})")
    lines += notes
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return PipelineResult("verify", report.passed, out, ["report.json", "channel.csv", "summary.txt"], asdict_report(report))


def asdict_report(report):
    return json.loads(report.to_json())


# ----------------------------------------------------------------------------------------
# report
# ----------------------------------------------------------------------------------------


def run_report(spec, out):
    """Collect whatever earlier modes left in ``out`` into report.md and plot CSVs."""
    sections = [f"# Results for {spec.name}", ""]
    found = []
    if (out / "bounds.csv").exists():
        header, rows = io.read_csv(out / "bounds.csv")
        io.write_csv(out / "plot_bounds.csv", header, rows)
        consts = json.loads((out / "constants.json").read_text())
        sections += ["## Analytic bounds", "", f"{len(rows)} time points, columns: {', '.join(header[1:])}.", ""]
        sections.append(f"Dissipativity certified: {consts['certified']}.")
        sections.append("")
        found.append("bounds")
    if (out / "ledger.csv").exists():
        header, rows = io.read_csv(out / "ledger.csv")
        io.write_csv(out / "plot_mass.csv", ["t", "mass", "residual"], ([r[0], r[1], r[3]] for r in rows))
        summ = json.loads((out / "summary.json").read_text())
        worst = max((abs(r[3]) for r in rows), default=0.0)
        sections += [
            "## Simulation",
            "",
            f"{summ['steps']} steps of size {io.fmt(summ['dt'])} to t = {io.fmt(summ['final_time'])}.",
            f"Mass {io.fmt(summ['initial_mass'])} -> {io.fmt(summ['final_mass'])}; largest mass-balance residual {io.fmt(worst)}.",
            "",
        ]
        found.append("simulate")
    if (out / "report.json").exists():
        rep = json.loads((out / "report.json").read_text())
        header, rows = io.read_csv(out / "channel.csv")
        io.write_csv(out / "plot_envelope.csv", header, rows)
        sections += ["## Envelope verification", "", f"Passed: {rep['passed']} (slack {io.fmt(rep['slack'])}).", ""]
        sections += [f"- {k} = {io.fmt(v)}" for k, v in sorted(rep["constants"].items())]
        sections.append(f"- max ratio = {io.fmt(rep['max_ratio'])}")
        for reg in rep["regressions"]:
            sections.append(f"- {reg['name']} = {io.fmt(reg['exponent'])} (stderr {io.fmt(reg['stderr'])}, target {io.fmt(reg['target'])})")
        sections.append("")
        found.append("verify")
    if not found:
        raise PreconditionError(f"nothing to report in {out}; run bounds, simulate or verify first")
    (out / "report.md").write_text("\n".join(sections))
    return PipelineResult("report", True, out, ["report.md"], {"sections": found})


RUNNERS = {"bounds": run_bounds, "simulate": run_simulate, "verify": run_verify, "report": run_report}


def run_pipeline(spec, mode, out_dir=None, slack=None, extra_metadata=None):
    """Run one mode; failures leave ``error.json`` behind and re-raise."""
    if mode not in RUNNERS:
        raise ValueError(f"unknown mode {mode!r}")
    out = Path(out_dir if out_dir is not None else spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    err = out / "error.json"
    if err.exists():
        err.unlink()
    try:
        if mode == "verify":
            result = run_verify(spec, out, slack)
        else:
            result = RUNNERS[mode](spec, out)
    except FPKError as exc:
        io.write_json(err, {"mode": mode, "error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code})
        _write_metadata(out, mode, spec, started, dict(extra_metadata or {}, status="error"))
        raise
    _write_metadata(out, mode, spec, started, dict(extra_metadata or {}, status="pass" if result.passed else "fail"))
    log.info("%s finished: %s", mode, "pass" if result.passed else "fail")
    return result
