"""Moment and density bound certification for Fokker-Planck-Kolmogorov equations."""
