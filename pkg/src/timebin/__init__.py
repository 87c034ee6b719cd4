"""Simulation and eight-port homodyne tomography of heralded time-bin qubits."""

__version__ = "0.1.0"
