"""Observed orders of the mass identity (in dt) and of the weak identity (in h, dt)."""

import argparse
import math

import numpy as np

from fpk_certify.coefficients import CoefficientField, bump
from fpk_certify.presets import killing_ou
from fpk_certify.solver import (
    Grid,
    InitialMeasure,
    SolverConfig,
    mass_balance_residual,
    project_initial_measure,
    run,
    weak_identity_residual,
)


def mass_orders():
    f = killing_ou()
    g = Grid((5.0,), (100,))
    prev = None
    for dt in (4e-3, 2e-3, 1e-3, 5e-4):
        start = project_initial_measure(InitialMeasure.gaussian((0.5,), 0.5), g)
        res = run(start, f, SolverConfig(dt=dt, end_time=1.0))
        err = float(np.max(np.abs(mass_balance_residual(res.ledger))))
        order = math.log2(prev / err) if prev else math.nan
        print(f"mass identity  dt={dt:<8g} residual={err:.3e}  order={order:.2f}")
        prev = err


def weak_orders():
    def a(x, t):
        return 1 + 0.5 * x[:, 0] ** 2 / (1 + x[:, 0] ** 2)

    def grad_a(x, t):
        return (x[:, 0] / (1 + x[:, 0] ** 2) ** 2)[:, None]

    f = CoefficientField.isotropic(1, a, lambda x, t: -x, lambda x, t: -x[:, 0] ** 2, grad_a=grad_a)
    tests = [bump((0.0,), 3.0), bump((0.5,), 2.5), bump((-0.5,), 3.5)]
    prev = None
    for n, dt in ((80, 2e-3), (160, 5e-4), (320, 1.25e-4)):
        g = Grid((5.0,), (n,))
        start = project_initial_measure(InitialMeasure.gaussian((0.5,), 0.5), g)
        res = run(start, f, SolverConfig(dt=dt, end_time=0.2, snapshot_every_step=True))
        err = np.array([weak_identity_residual(res.snapshots, f, u) for u in tests])
        orders = np.log2(prev / err) if prev is not None else np.full(3, math.nan)
        print(f"weak identity  N={n:<4d} residuals={np.array2string(err, precision=3)} orders={np.array2string(orders, precision=2)}")
        prev = err


def main():
    argparse.ArgumentParser(description=__doc__).parse_args()
    mass_orders()
    weak_orders()


if __name__ == "__main__":
    main()
