"""Numerical toolkit for the 2-D doubly parabolic Keller-Segel system.

Submodules
----------
profiles     self-similar profile shooting problem, mass map, thresholds
spectral     periodic pseudo-spectral fields, heat flow, norms
simulator    ETD time stepping in physical and rescaled variables
diagnostics  decay fits and convergence reports
cli          command line entry point
"""

__version__ = "0.1.0"
