"""Compare Phi * (direct solve) with a solve of the transformed equation.

Uses the Ornstein-Uhlenbeck field and Phi = exp(|x|^2/4).  The factor-2
drift correction should converge at second order; the single-factor variant
should not converge at all.
"""

import argparse

import numpy as np

from fpk_certify.presets import ornstein_uhlenbeck
from fpk_certify.solver import Grid, InitialMeasure, SolverConfig, l1_distance, project_initial_measure, run
from fpk_certify.verifier import PhiWeight, transformed_field


def main():
    argparse.ArgumentParser(description=__doc__).parse_args()
    ou = ornstein_uhlenbeck(1)
    phi = PhiWeight.radial_exponential(1, 0.25, 2)
    for literal in (False, True):
        prev = None
        for n in (128, 256, 512):
            g = Grid((8.0,), (n,))
            start = project_initial_measure(InitialMeasure.gaussian((1.0,), 0.5), g)
            direct = run(start, ou, SolverConfig(end_time=1.0)).final.values
            weights = phi.function.u(g.centers(), 0.0).reshape(g.shape)
            moved = start.with_values(start.values * weights, 0.0)
            conj = run(moved, transformed_field(ou, phi, literal=literal), SolverConfig(end_time=1.0)).final.values
            err = l1_distance(conj, direct * weights, g)
            order = np.log2(prev / err) if prev else float("nan")
            label = "single factor" if literal else "factor two"
            print(f"{label:13s} N={n:<4d} L1={err:.3e} order={order:.2f}")
            prev = err


if __name__ == "__main__":
    main()
