"""Random problem instances shared by the test modules."""

import numpy as np
from scipy.stats import unitary_group

from hessgrape import BilinearSystem


def random_hermitian(rng, d, scale=1.0):
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * (A + A.conj().T) / 2


def random_system(rng, d, M, dim_sub=None, initial=False):
    """Random drift and controls with a random target on the leading subspace."""
    dim_sub = d if dim_sub is None else dim_sub
    P = np.diag([1.0] * dim_sub + [0.0] * (d - dim_sub)).astype(complex)
    V = np.eye(d, dtype=complex)
    V[:dim_sub, :dim_sub] = unitary_group.rvs(dim_sub, random_state=rng) if dim_sub > 1 else np.exp(1j * rng.uniform(0, 6.28))
    U0 = unitary_group.rvs(d, random_state=rng) if initial else None
    return BilinearSystem(
        random_hermitian(rng, d),
        np.array([random_hermitian(rng, d) for _ in range(M)]),
        P,
        V,
        U0,
    )
