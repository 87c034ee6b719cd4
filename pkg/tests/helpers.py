import numpy as np


def random_density_matrix(n, seed, rank=None):
    """Full-rank (or given-rank) random density matrix of size n."""
    rng = np.random.default_rng(seed)
    k = n if rank is None else rank
    g = rng.normal(size=(n, k)) + 1j * rng.normal(size=(n, k))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real
