"""Catalogue of coefficient presets, one per worked example plus a few test problems.

Each preset builds a CoefficientField with an analytic diffusion divergence
and carries default values for every problem-file section.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .coefficients import CoefficientField


def _norm(x):
    return np.linalg.norm(x, axis=1)


def _zeros(x, t):
    return np.zeros(len(x))


def _ones(x, t):
    return np.ones(len(x))


def _zero_vec(x, t):
    return np.zeros_like(x)


def ornstein_uhlenbeck(dim=1):
    return CoefficientField.isotropic(dim, _ones, lambda x, t: -x, _zeros, grad_a=_zero_vec, name="ou")


def killing_ou(k=4.0):
    return CoefficientField.isotropic(
        1, _ones, lambda x, t: -x, lambda x, t: -_norm(x) ** k, grad_a=_zero_vec, name="killing"
    )


def polynomial_drift(dim=1, k=4.0):
    """A = I, b = -x |x|^{k-2}, c = 0."""
    return CoefficientField.isotropic(
        dim, _ones, lambda x, t: -x * (_norm(x) ** (k - 2))[:, None], _zeros, grad_a=_zero_vec, name=f"drift{k}"
    )


def mild_growth_killing(r=3.0, k=4.0, growth=0.5):
    """1D: A = 1 + growth x^2/(1+x^2), b = -x|x|^{r-2} A, c = -|x|^k."""

    def a(x, t):
        s = x[:, 0] ** 2
        return 1.0 + growth * s / (1.0 + s)

    def grad_a(x, t):
        return (2.0 * growth * x[:, 0] / (1.0 + x[:, 0] ** 2) ** 2)[:, None]

    return CoefficientField.isotropic(
        1,
        a,
        lambda x, t: -x * (_norm(x) ** (r - 2) * a(x, t))[:, None],
        lambda x, t: -_norm(x) ** k,
        grad_a=grad_a,
        name="mild-growth",
    )


def split_exponential(r=3.0, delta=0.5, k=4.0, split=1):
    """d = 2 split: A = e^{|x'|^{r-delta} - |x''|^{r-delta}} I, b = -x|x|^{r-2} e^{...}, c = -|x|^k."""
    p = r - delta

    def expo(x):
        return np.exp(_norm(x[:, :split]) ** p - _norm(x[:, split:]) ** p)

    def a(x, t):
        return expo(x)

    def grad_a(x, t):
        g = np.zeros_like(x)
        for part, sign in ((slice(0, split), 1.0), (slice(split, None), -1.0)):
            y = x[:, part]
            n = _norm(y)
            safe = np.where(n > 0, n, 1.0)
            g[:, part] = sign * (p * np.where(n > 0, safe ** (p - 2), 0.0))[:, None] * y
        return g * expo(x)[:, None]

    return CoefficientField.isotropic(
        2 * split,
        a,
        lambda x, t: -x * (_norm(x) ** (r - 2) * expo(x))[:, None],
        lambda x, t: -_norm(x) ** k,
        grad_a=grad_a,
        name="split-exponential",
    )


@dataclass(frozen=True)
class Preset:
    name: str
    description: str
    build: Callable[[], CoefficientField]
    dimension: int
    defaults: dict = field(default_factory=dict)


def _snapshots(start, stop, count):
    return {"snapshot_start": start, "end_time": stop, "snapshots": count}


PRESETS = {
    "ou1d": Preset(
        "ou1d",
        "Ornstein-Uhlenbeck: A = 1, b = -x, c = 0",
        ornstein_uhlenbeck,
        1,
        {
            "lyapunov": {"r": 2.0, "k": 2.0, "alpha": 0.25},
            "bounds": {"select": ["case_i"]},
            "grid": {"radius": 8.0, "cells": 256},
            "solver": _snapshots(0.5, 5.0, 10),
            "initial": {"kind": "gaussian", "mean": [1.0], "variance": 0.5},
            "verify": {"form": "blowup", "alpha_prime": 0.4, "r": 2.0, "q": 1.0, "slack": 0.25},
        },
    ),
    "killing1d": Preset(
        "killing1d",
        "OU drift with killing potential c = -|x|^4",
        killing_ou,
        1,
        {
            "lyapunov": {"r": 2.0, "k": 4.0},
            "bounds": {"select": ["case_i"]},
            "grid": {"radius": 5.0, "cells": 100},
            "solver": dict(_snapshots(0.1, 1.0, 10), dt=1e-3),
            "initial": {"kind": "gaussian", "mean": [1.0], "variance": 0.25},
            "verify": {"form": "blowup", "alpha_prime": 0.4, "r": 2.0, "q": 1.0},
        },
    ),
    "dissipative1d": Preset(
        "dissipative1d",
        "A = 1, b = -x|x|^2, c = 0 (power moment decay)",
        lambda: polynomial_drift(1, 4.0),
        1,
        {
            "lyapunov": {"r": 2.0, "k": 4.0},
            "bounds": {"select": ["moment_power"]},
            "grid": {"radius": 8.0, "cells": 256},
            "solver": _snapshots(0.01, 1.0, 25),
            "initial": {"kind": "point_mass", "center": [0.0]},
            "verify": {"form": "blowup", "alpha_prime": 0.2, "r": 4.0, "q": 1.0},
        },
    ),
    "example2_3": Preset(
        "example2_3",
        "power Lyapunov function |x|^4 for the OU field, linear-growth case",
        ornstein_uhlenbeck,
        1,
        {
            "lyapunov": {"r": 4.0, "k": 2.0},
            "bounds": {"select": ["case_i"], "t_min": 0.01},
            "grid": {"radius": 8.0, "cells": 256},
            "solver": _snapshots(0.1, 1.0, 10),
            "initial": {"kind": "gaussian", "mean": [1.0], "variance": 0.5},
            "verify": {"form": "blowup", "alpha_prime": 0.4, "r": 2.0, "q": 1.0},
        },
    ),
    "example2_4": Preset(
        "example2_4",
        "exponential Lyapunov function exp(|x|^2 / 4) for the OU field",
        ornstein_uhlenbeck,
        1,
        {
            "lyapunov": {"r": 2.0, "k": 2.0, "alpha": 0.25, "function": "exponential"},
            "bounds": {"select": ["case_i"], "t_min": 0.01},
            "grid": {"radius": 8.0, "cells": 256},
            "solver": _snapshots(0.1, 1.0, 10),
            "initial": {"kind": "gaussian", "mean": [1.0], "variance": 0.5},
            "verify": {"form": "blowup", "alpha_prime": 0.4, "r": 2.0, "q": 1.0},
        },
    ),
    "example2_5": Preset(
        "example2_5",
        "A = 1, b = -x|x|^2: moments decay like t^{-r/(k-2)}",
        lambda: polynomial_drift(1, 4.0),
        1,
        {
            "lyapunov": {"r": 2.0, "k": 4.0},
            "bounds": {"select": ["moment_power"]},
            "grid": {"radius": 8.0, "cells": 256},
            "solver": _snapshots(0.01, 1.0, 25),
            "initial": {"kind": "point_mass", "center": [0.0]},
            "verify": {"form": "blowup", "alpha_prime": 0.2, "r": 4.0, "q": 1.0},
        },
    ),
    "example2_6": Preset(
        "example2_6",
        "A = 1, b = -x|x|^4: exponential moments blow up like exp(t^{-r/(k-r)})",
        lambda: polynomial_drift(1, 6.0),
        1,
        {
            "lyapunov": {"r": 3.0, "k": 6.0, "alpha": 1.0},
            "bounds": {"select": ["moment_exponential"], "t_min": 1e-4, "t_max": 1.0},
            "grid": {"radius": 4.0, "cells": 128},
            "solver": _snapshots(0.05, 0.5, 10),
            "initial": {"kind": "point_mass", "center": [0.0]},
            "verify": {"form": "blowup", "alpha_prime": 0.5, "r": 3.0, "q": 1.0},
        },
    ),
    "example2_7": Preset(
        "example2_7",
        "A = 1, b = -x|x|^3: time-weighted exponential moments",
        lambda: polynomial_drift(1, 5.0),
        1,
        {
            "lyapunov": {"r": 3.0, "k": 5.0, "alpha": 1.0, "beta": 2.0, "certify_radius": 6.0},
            "bounds": {"select": ["time_weighted"], "t_min": 1e-3, "t_max": 1.0},
            "grid": {"radius": 4.0, "cells": 128},
            "solver": _snapshots(0.05, 0.5, 10),
            "initial": {"kind": "point_mass", "center": [0.0]},
            "verify": {"form": "timeweighted", "alpha_prime": 0.5, "r": 3.0, "beta": 2.0},
        },
    ),
    "intro2d": Preset(
        "intro2d",
        "d = 2 split example: A = e^{|x1|^{2.5} - |x2|^{2.5}} I, b = -x|x| e^{...}, c = -|x|^4",
        lambda: split_exponential(3.0, 0.5, 4.0, 1),
        2,
        {
            "problem": {"split": 1},
            "lyapunov": {"r": 3.0, "k": 4.0, "alpha": 0.25, "delta": 0.5, "certify_radius": 8.0},
            "bounds": {"select": ["moment_exponential"], "t_min": 1e-3, "t_max": 1.0},
            "grid": {"radius": 2.0, "cells": 24},
            "solver": _snapshots(0.02, 0.2, 8),
            "initial": {"kind": "uniform"},
            "verify": {"form": "blowup", "alpha_prime": 0.2, "r": 3.0, "q": 3.0, "slack": 0.25},
        },
    ),
    "example3_8": Preset(
        "example3_8",
        "1D analogue: A = 1 + x^2/(2(1+x^2)), b = -x|x| A, c = -|x|^4; envelope exp(-a|x|^3) exp(C t^-3)",
        mild_growth_killing,
        1,
        {
            "lyapunov": {"r": 3.0, "k": 4.0, "alpha": 1.0 / 3.0},
            "bounds": {"select": ["moment_exponential"], "t_min": 1e-3, "t_max": 1.0},
            "grid": {"radius": 8.0, "cells": 512},
            "solver": _snapshots(0.01, 1.0, 41),
            "initial": {"kind": "uniform"},
            "verify": {"form": "blowup", "alpha_prime": 0.25, "r": 3.0, "q": 3.0, "slack": 0.25},
        },
    ),
    "example3_9": Preset(
        "example3_9",
        "A = 1, b = -x|x|^2: time-weighted Gaussian-type envelope t^-p exp(-a t^beta |x|^3)",
        lambda: polynomial_drift(1, 4.0),
        1,
        {
            "lyapunov": {"r": 3.0, "k": 4.0, "alpha": 1.0, "beta": 2.0, "certify_radius": 8.0},
            "bounds": {"select": ["time_weighted"], "t_min": 1e-3, "t_max": 1.0},
            "grid": {"radius": 6.0, "cells": 192},
            "solver": _snapshots(0.05, 1.0, 20),
            "initial": {"kind": "point_mass", "center": [1.0]},
            "verify": {"form": "timeweighted", "alpha_prime": 0.5, "r": 3.0, "beta": 2.0, "slack": 0.25},
        },
    ),
}


def get_preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; known: {', '.join(sorted(PRESETS))}") from None
