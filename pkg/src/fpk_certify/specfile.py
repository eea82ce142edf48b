"""Problem files: TOML sections of ``key = value`` pairs, validated into a ProblemSpec.

Validation collects every violation before failing.  Preset defaults fill
any key the file leaves out.
"""

import copy
import hashlib
import sys
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .coefficients import CoefficientField
from .errors import ExpressionSyntaxError, SpecError
from .expressions import parse_expression
from .presets import PRESETS

BOUND_KINDS = ("case_i", "moment_power", "moment_exponential", "time_weighted")

SCHEMA = {
    "problem": {"preset": str, "dimension": int, "split": int, "name": str},
    "coefficients": {"diffusion": (str, list), "drift": (str, list), "potential": str},
    "lyapunov": {
        "r": float,
        "k": float,
        "alpha": float,
        "delta": float,
        "beta": float,
        "c1": float,
        "c2": float,
        "certify_radius": float,
        "function": str,
    },
    "bounds": {"select": list, "t_min": float, "t_max": float, "points": int},
    "grid": {"radius": (float, list), "cells": (int, list)},
    "solver": {
        "dt": float,
        "cfl": float,
        "scheme": str,
        "boundary": str,
        "reaction": str,
        "end_time": float,
        "snapshots": int,
        "snapshot_start": float,
        "snapshot_times": list,
    },
    "initial": {"kind": str, "mean": list, "variance": float, "center": list, "width": float},
    "verify": {
        "form": str,
        "alpha_prime": float,
        "r": float,
        "q": float,
        "beta": float,
        "slack": float,
        "reliability_tol": float,
        "min_excess": float,
    },
    "output": {"dir": str},
}

DEFAULTS = {
    "problem": {"split": None, "name": ""},
    "lyapunov": {"delta": 0.5, "alpha": 1.0, "certify_radius": 4.0, "function": "power"},
    "bounds": {"select": [], "t_min": 1e-4, "t_max": 1.0, "points": 41},
    "grid": {"radius": 8.0, "cells": 256},
    "solver": {
        "cfl": 0.9,
        "scheme": "fitted",
        "boundary": "no-flux",
        "reaction": "exact",
        "end_time": 1.0,
        "snapshots": 10,
        "snapshot_start": 0.1,
    },
    "initial": {"kind": "gaussian", "variance": 1.0},
    "verify": {"form": "blowup", "slack": 0.25, "reliability_tol": 0.01, "min_excess": 1.0},
    "output": {"dir": "out"},
}


@dataclass
class ProblemSpec:
    dimension: int
    split: int
    preset: Optional[str]
    coefficients: Optional[dict]
    lyapunov: dict
    bounds: dict
    grid: dict
    solver: dict
    initial: dict
    verify: dict
    output_dir: str
    name: str = ""
    digest: str = ""
    _field: Optional[CoefficientField] = field(default=None, repr=False, compare=False)

    def coefficient_field(self):
        if self._field is None:
            if self.preset is not None:
                self._field = PRESETS[self.preset].build()
            else:
                self._field = field_from_expressions(self.coefficients, self.dimension, self.split)
        return self._field

    def snapshot_times(self):
        s = self.solver
        if s.get("snapshot_times"):
            return tuple(float(v) for v in s["snapshot_times"])
        n, t0, t1 = int(s["snapshots"]), float(s["snapshot_start"]), float(s["end_time"])
        if n <= 0 or t1 <= 0:
            return ()
        if n == 1 or t0 >= t1:
            return (t1,)
        return tuple(float(v) for v in np.geomspace(t0, t1, n))

    def to_dict(self):
        d = asdict(self)
        d.pop("_field", None)
        return d


def field_from_expressions(coeffs, dim, split=None):
    """CoefficientField from formula strings; the diffusion divergence uses finite differences.

    ``diffusion`` is either one formula a (A = a I) or d*d formulas in row-major order.
    """
    diff = coeffs.get("diffusion", "1")
    if isinstance(diff, str):
        a = parse_expression(diff, dim, split)
        entries = [a]
        eye = np.eye(dim)

        def diffusion(x, t):
            return a(x, t)[:, None, None] * eye

    else:
        entries = [parse_expression(s, dim, split) for s in diff]

        def diffusion(x, t):
            vals = np.stack([e(x, t) for e in entries], axis=1)
            return vals.reshape(len(x), dim, dim)

    drift_src = coeffs.get("drift", ["0"] * dim)
    if isinstance(drift_src, str):
        drift_src = [drift_src]
    drifts = [parse_expression(s, dim, split) for s in drift_src]
    pot = parse_expression(coeffs.get("potential", "0"), dim, split)

    def drift(x, t):
        return np.stack([e(x, t) for e in drifts], axis=1)

    def potential(x, t):
        return pot(x, t)

    uses_t = any("t" in _names(e.tree) for e in entries + drifts + [pot])
    return CoefficientField(dim, diffusion, drift, potential, time_dependent=uses_t, name="expressions")


def _names(node):
    out = set()
    stack = [node]
    while stack:
        n = stack.pop()
        name = getattr(n, "name", None)
        if isinstance(name, str) and not hasattr(n, "args"):
            out.add(name)
        for attr in ("operand", "left", "right"):
            if hasattr(n, attr):
                stack.append(getattr(n, attr))
        stack.extend(getattr(n, "args", ()))
    return out


def _type_ok(value, expected):
    kinds = expected if isinstance(expected, tuple) else (expected,)
    for k in kinds:
        if k is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            return True
        if k is int and isinstance(value, int) and not isinstance(value, bool):
            return True
        if k in (str, list) and isinstance(value, k):
            return True
    return False


def _merge(base, override):
    out = copy.deepcopy(base)
    for sec, vals in override.items():
        out.setdefault(sec, {}).update(copy.deepcopy(vals))
    return out


def parse_spec(text):
    """Parse and validate a problem file; raises SpecError listing every violation."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise SpecError([f"syntax error: {exc}"]) from None
    problems = []
    # bad entries are recorded and dropped so the remaining checks still run
    for sec in list(doc):
        vals = doc[sec]
        if sec not in SCHEMA:
            problems.append(f"unknown section [{sec}]")
            del doc[sec]
            continue
        if not isinstance(vals, dict):
            problems.append(f"[{sec}] must be a section of key = value pairs")
            del doc[sec]
            continue
        for key in list(vals):
            if key not in SCHEMA[sec]:
                problems.append(f"unknown key {sec}.{key}")
                del vals[key]
            elif not _type_ok(vals[key], SCHEMA[sec][key]):
                problems.append(f"{sec}.{key} has the wrong type ({type(vals[key]).__name__})")
                del vals[key]

    preset_name = doc.get("problem", {}).get("preset")
    merged = copy.deepcopy(DEFAULTS)
    dim = doc.get("problem", {}).get("dimension")
    if preset_name is not None:
        if preset_name not in PRESETS:
            raise SpecError(problems + [f"unknown preset {preset_name!r}; known: {', '.join(sorted(PRESETS))}"])
        preset = PRESETS[preset_name]
        merged = _merge(merged, preset.defaults)
        if dim is not None and dim != preset.dimension:
            problems.append(f"problem.dimension = {dim} but preset {preset_name} has dimension {preset.dimension}")
        dim = preset.dimension
        if "coefficients" in doc:
            problems.append("give either problem.preset or a [coefficients] section, not both")
    elif "coefficients" not in doc:
        problems.append("a problem needs problem.preset or a [coefficients] section")
    merged = _merge(merged, doc)
    if dim is None:
        dim = 1
    if dim not in (1, 2, 3) and not (isinstance(dim, int) and dim >= 1):
        problems.append("problem.dimension must be a positive integer")

    split = merged["problem"].get("split")
    if split is None:
        split = max(1, dim // 2)
    if not 0 <= split <= dim:
        problems.append(f"problem.split = {split} must lie in [0, {dim}]")

    coeffs = None
    if preset_name is None and "coefficients" in doc:
        coeffs = merged["coefficients"]
        _check_coefficients(coeffs, dim, split, problems)

    _check_lyapunov(merged["lyapunov"], merged["bounds"], problems)
    _check_grid(merged["grid"], dim, problems)
    _check_solver(merged["solver"], problems)
    _check_initial(merged["initial"], dim, problems)
    _check_verify(merged["verify"], problems)
    if problems:
        raise SpecError(problems)

    spec = ProblemSpec(
        dimension=int(dim),
        split=int(split),
        preset=preset_name,
        coefficients=coeffs,
        lyapunov=merged["lyapunov"],
        bounds=merged["bounds"],
        grid=merged["grid"],
        solver=merged["solver"],
        initial=merged["initial"],
        verify=merged["verify"],
        output_dir=merged["output"]["dir"],
        name=merged["problem"].get("name") or (preset_name or "custom"),
        digest=hashlib.sha256(text.encode()).hexdigest(),
    )
    return spec


def _check_coefficients(coeffs, dim, split, problems):
    diff = coeffs.get("diffusion", "1")
    diffs = [diff] if isinstance(diff, str) else diff
    if not isinstance(diff, str) and len(diff) != dim * dim:
        problems.append(f"coefficients.diffusion needs 1 or {dim * dim} formulas, got {len(diff)}")
    drift = coeffs.get("drift", ["0"] * dim)
    drifts = [drift] if isinstance(drift, str) else drift
    if len(drifts) != dim:
        problems.append(f"coefficients.drift needs {dim} formulas, got {len(drifts)}")
    for key, srcs in (("diffusion", diffs), ("drift", drifts), ("potential", [coeffs.get("potential", "0")])):
        for i, s in enumerate(srcs):
            if not isinstance(s, str):
                problems.append(f"coefficients.{key}[{i}] must be a formula string")
                continue
            try:
                parse_expression(s, dim, split)
            except ExpressionSyntaxError as exc:
                problems.append(f"coefficients.{key}[{i}]: {exc}")


def _check_lyapunov(lyap, bounds, problems):
    r, k = lyap.get("r"), lyap.get("k")
    delta, alpha, beta = lyap.get("delta"), lyap.get("alpha"), lyap.get("beta")
    if not 0 < delta < 1:
        problems.append(f"lyapunov.delta = {delta} must lie in (0, 1)")
    if not alpha > 0:
        problems.append(f"lyapunov.alpha = {alpha} must be positive")
    if lyap.get("function") not in ("power", "exponential"):
        problems.append("lyapunov.function must be 'power' or 'exponential'")
    if not lyap.get("certify_radius", 1.0) > 0:
        problems.append("lyapunov.certify_radius must be positive")
    for name in ("c1", "c2"):
        if name in lyap and not lyap[name] > 0:
            problems.append(f"lyapunov.{name} must be positive")
    select = bounds.get("select", [])
    for s in select:
        if s not in BOUND_KINDS:
            problems.append(f"unknown bound {s!r}; choose from {', '.join(BOUND_KINDS)}")
    needs_rk = [s for s in select if s in BOUND_KINDS]
    if needs_rk and (r is None or k is None):
        problems.append("lyapunov.r and lyapunov.k are required by the selected bounds")
        return
    if "case_i" in select and not r >= 2:
        problems.append("case_i: r >= 2 required")
    if "moment_power" in select and not (k > 2 and r >= 2):
        problems.append("moment_power: Let k>2 and r>=2")
    if "moment_exponential" in select and not (r > 2 and k > r):
        problems.append("moment_exponential: Let r>2 and k>r")
    if "time_weighted" in select:
        if not (r > 2 and k > 2):
            problems.append("time_weighted: Let r>2, k>2")
        elif beta is None or not beta > r / (k - 2):
            problems.append(f"time_weighted: beta must exceed r/(k-2) = {r / (k - 2):g}")
    if not (0 < bounds.get("t_min", 1) < bounds.get("t_max", 1)):
        problems.append("bounds.t_min must satisfy 0 < t_min < t_max")
    if bounds.get("points", 2) < 2:
        problems.append("bounds.points must be at least 2")


def _check_grid(grid, dim, problems):
    radius = grid["radius"] if isinstance(grid["radius"], list) else [grid["radius"]] * min(dim, 2)
    cells = grid["cells"] if isinstance(grid["cells"], list) else [grid["cells"]] * min(dim, 2)
    if dim > 2:
        problems.append("the grid solver supports dimension 1 or 2 only")
    if len(radius) != min(dim, 2) or len(cells) != min(dim, 2):
        problems.append("grid.radius and grid.cells need one entry per axis")
    if any(not (isinstance(v, (int, float)) and v > 0) for v in radius):
        problems.append("grid.radius must be positive")
    if any(not (isinstance(v, int) and v >= 8) for v in cells):
        problems.append("grid.cells must be integers >= 8")


def _check_solver(s, problems):
    if not 0 < s["cfl"] <= 1:
        problems.append(f"solver.cfl = {s['cfl']} must lie in (0, 1]")
    if "dt" in s and not s["dt"] > 0:
        problems.append("solver.dt must be positive")
    for key, allowed in (("scheme", ("fitted", "upwind")), ("boundary", ("no-flux", "absorbing")), ("reaction", ("exact", "explicit"))):
        if s[key] not in allowed:
            problems.append(f"solver.{key} must be one of {', '.join(allowed)}")
    if not s["end_time"] >= 0:
        problems.append("solver.end_time must be nonnegative")
    if s["snapshots"] < 0:
        problems.append("solver.snapshots must be nonnegative")
    times = s.get("snapshot_times") or []
    if any(not isinstance(v, (int, float)) for v in times):
        problems.append("solver.snapshot_times must be numbers")
    elif any(b < a for a, b in zip(times, times[1:])):
        problems.append("solver.snapshot_times must be non-decreasing")


def _check_initial(init, dim, problems):
    kind = init.get("kind")
    if kind not in ("gaussian", "point_mass", "uniform"):
        problems.append("initial.kind must be gaussian, point_mass or uniform")
    for key in ("mean", "center"):
        if key in init and len(init[key]) != dim:
            problems.append(f"initial.{key} needs {dim} entries")
    if not init.get("variance", 1.0) > 0:
        problems.append("initial.variance must be positive")
    if "width" in init and not init["width"] > 0:
        problems.append("initial.width must be positive")


def _check_verify(v, problems):
    if v["form"] not in ("blowup", "timeweighted"):
        problems.append("verify.form must be blowup or timeweighted")
    if "alpha_prime" in v and not v["alpha_prime"] > 0:
        problems.append("verify.alpha_prime must be positive")
    if v["form"] == "blowup" and "q" in v and not v["q"] > 0:
        problems.append("verify.q must be positive")
    if not v["slack"] >= 0:
        problems.append("verify.slack must be nonnegative")


def load_spec(path):
    with open(path, encoding="utf-8") as fh:
        return parse_spec(fh.read())
