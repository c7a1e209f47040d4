"""Simulation and analysis toolkit for metastable Markovian open quantum systems.

Subpackages
-----------
linalg
    Dense non-Hermitian eigendecomposition and Sylvester solves.
qme
    Lindblad generators, spectral evolution, and metastable-phase analysis.
trajectories
    Quantum-jump Monte Carlo unravelling with exact jump-time sampling.
reset
    Quantum reset processes: semi-Markov representation, jumpless
    trajectories, splitting probabilities, committors, elbow analysis.
stats
    Phase labelling, Monte Carlo committors, invariant-measure histograms.
models
    Preset model builders and an explicit operator-basis validation oracle.
cli
    Batch experiment driver emitting CSV/JSON artifacts.
"""

__version__ = "1.0.0"
