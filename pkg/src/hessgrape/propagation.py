"""Single-step propagators and their exact control derivatives.

A step propagator is ``U = exp(-i H dt)`` for a piecewise-constant
Hamiltonian ``H = H0 + sum_k c_k H_k``.  Derivatives with respect to the
amplitudes ``c_k`` are evaluated in the eigenbasis of ``H`` where the
time-ordered integrals reduce to divided differences of
``f(E) = exp(-i E dt)``:

* the first exchange matrix ``I(m, n) = f[E_m, E_n]``,
* the second exchange tensor ``II(a, b, c) = f[E_a, E_b, E_c]``.

Every function accepts stacked inputs with arbitrary leading batch
dimensions, so all time steps of a pulse are handled in one call.

A truncated Taylor series propagator with exact derivatives of the
truncated polynomial is provided as an alternative backend.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement, permutations
from math import factorial

import numpy as np

from .counters import matmul

# spread * dt below which the second divided difference is summed as a series
_SERIES_SPREAD = 0.5
_SERIES_TERMS = 20


@dataclass(frozen=True)
class StepEigensystem:
    """Eigendecomposition ``H = basis @ diag(energies) @ basis^dagger``.

    Columns of ``basis`` are eigenvectors.  ``energies`` are ascending along
    the last axis.  Leading batch dimensions are allowed.
    """

    energies: np.ndarray
    basis: np.ndarray
    dt: float

    @property
    def dim(self) -> int:
        return self.energies.shape[-1]


def _dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def default_degeneracy_tol(energies: np.ndarray, dt: float) -> float:
    """Gap below which two eigenvalues are treated as equal."""
    scale = float(np.max(np.abs(energies))) if np.size(energies) else 0.0
    return max(1e-12, 1e-12 * scale) / dt


def eig_hermitian(H: np.ndarray, dt: float = 1.0) -> StepEigensystem:
    """Diagonalize a (stack of) Hermitian matrices.

    The input is symmetrized as ``(H + H^dagger) / 2`` before calling
    ``numpy.linalg.eigh``.

    Raises:
        ValueError: if ``H`` holds non-finite entries or is not square.
    """
    H = np.asarray(H)
    if H.ndim < 2 or H.shape[-1] != H.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {H.shape}")
    if not np.all(np.isfinite(H)):
        raise ValueError("Hamiltonian has non-finite entries")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    Hs = 0.5 * (H + _dagger(H))
    energies, basis = np.linalg.eigh(Hs)
    return StepEigensystem(energies=energies, basis=basis, dt=float(dt))


def from_eigenbasis(es: StepEigensystem, A: np.ndarray) -> np.ndarray:
    """basis @ A @ basis^dagger"""
    return matmul(matmul(es.basis, A), _dagger(es.basis))


def to_eigenbasis(es: StepEigensystem, H: np.ndarray) -> np.ndarray:
    """basis^dagger @ H @ basis"""
    return matmul(matmul(_dagger(es.basis), H), es.basis)


def step_propagator(es: StepEigensystem) -> np.ndarray:
    phases = np.exp(-1j * es.energies * es.dt)
    return matmul(es.basis * phases[..., None, :], _dagger(es.basis))


def _first_divided(x: np.ndarray, y: np.ndarray, dt: float) -> np.ndarray:
    # (f(x) - f(y)) / (x - y) written without cancellation
    return -1j * dt * np.exp(-0.5j * (x + y) * dt) * np.sinc((x - y) * dt / (2 * np.pi))


def first_exchange(es: StepEigensystem, degeneracy_tol: float | None = None) -> np.ndarray:
    """Exchange matrix ``I(m, n)`` of the first derivative.

    ``I(m, n) = -i dt exp(-i E_m dt)`` when ``|E_m - E_n| <= degeneracy_tol``
    and ``(exp(-i E_m dt) - exp(-i E_n dt)) / (E_m - E_n)`` otherwise.  The
    non-degenerate branch is evaluated through a sinc so it stays accurate
    for gaps just above the tolerance.  Exactly symmetric.
    """
    if not es.dt > 0:
        raise ValueError("dt must be positive")
    E = es.energies
    tol = default_degeneracy_tol(E, es.dt) if degeneracy_tol is None else degeneracy_tol
    Em = E[..., :, None]
    En = E[..., None, :]
    out = _first_divided(Em, En, es.dt)
    degenerate = np.abs(Em - En) <= tol
    out = np.where(degenerate, -1j * es.dt * np.exp(-1j * Em * es.dt), out)
    upper = np.triu(out)
    return upper + np.swapaxes(np.triu(out, 1), -1, -2)


def _second_divided_series(lo, mid, hi, dt):
    """f[lo, mid, hi] from the Taylor series about the mean node."""
    centre = (lo + mid + hi) / 3.0
    z = [-1j * dt * (x - centre) for x in (lo, mid, hi)]
    # complete homogeneous symmetric polynomials h_k(z0, z1, z2)
    h = [np.ones_like(z[0])]
    for _ in range(_SERIES_TERMS):
        h.append(h[-1] * z[0])
    for zj in z[1:]:
        for k in range(1, _SERIES_TERMS + 1):
            h[k] = h[k] + zj * h[k - 1]
    total = sum(h[k] / factorial(k + 2) for k in range(_SERIES_TERMS + 1))
    return (-1j * dt) ** 2 * np.exp(-1j * dt * centre) * total


class SecondExchangeTensor:
    """Exchange tensor ``II(n1, n2, n3)`` of the second derivative.

    The value is the second divided difference of ``exp(-i E dt)`` over the
    three eigenvalues; it does not depend on the index order.  Indices are
    sorted by energy and the separated case uses
    ``(I(lo, mid) - I(mid, hi)) / (E_lo - E_hi)`` with stored ``I`` entries.
    Clustered triples (total spread times ``dt`` under 0.5) are summed as a
    Taylor series instead, and triples whose pairwise gaps are all within
    ``degeneracy_tol`` take the closed form ``(-i dt / 2) I(n, n)``.

    Entries are produced on demand through ``__call__``; :meth:`dense`
    materializes the full ``(..., d, d, d)`` array once and caches it.
    """

    def __init__(self, es: StepEigensystem, first: np.ndarray, degeneracy_tol: float | None = None):
        self.es = es
        self.first = first
        self.dt = es.dt
        self.tol = (
            default_degeneracy_tol(es.energies, es.dt) if degeneracy_tol is None else degeneracy_tol
        )
        self._dense: np.ndarray | None = None

    def _divided(self, lo, mid, hi, I_lo_mid, I_mid_hi):
        """Second divided difference from energy-sorted nodes."""
        dt = self.dt
        gap = lo - hi
        out = (I_lo_mid - I_mid_hi) / np.where(gap == 0, 1.0, gap)
        clustered = (hi - lo) * dt < _SERIES_SPREAD
        if np.any(clustered):
            out[clustered] = _second_divided_series(lo[clustered], mid[clustered], hi[clustered], dt)
        degenerate = ((mid - lo) <= self.tol) & ((hi - mid) <= self.tol) & ((hi - lo) <= self.tol)
        if np.any(degenerate):
            out[degenerate] = (-0.5j * dt) * (-1j * dt) * np.exp(-1j * lo[degenerate] * dt)
        return out

    def _flat(self):
        d = self.es.dim
        return self.es.energies.reshape(-1, d), self.first.reshape(-1, d, d)

    def __call__(self, n1: int, n2: int, n3: int) -> np.ndarray | complex:
        E, I = self._flat()
        idx = np.array([n1, n2, n3])
        order = np.argsort(E[:, idx], axis=-1, kind="stable")
        srt = idx[order]  # (B, 3) indices sorted by energy
        rows = np.arange(E.shape[0])
        lo, mid, hi = (E[rows, srt[:, k]] for k in range(3))
        val = self._divided(
            lo, mid, hi, I[rows, srt[:, 0], srt[:, 1]], I[rows, srt[:, 1], srt[:, 2]]
        )
        batch_shape = self.es.energies.shape[:-1]
        return complex(val[0]) if not batch_shape else val.reshape(batch_shape)

    def dense(self) -> np.ndarray:
        """Full tensor; relies on ``energies`` being ascending along the last axis."""
        if self._dense is None:
            d = self.es.dim
            E, I = self._flat()
            trip = np.array(list(combinations_with_replacement(range(d), 3)))
            a, b, c = trip.T
            vals = self._divided(E[:, a], E[:, b], E[:, c], I[:, a, b], I[:, b, c])
            lookup = np.empty((d, d, d), dtype=int)
            for n, (i, j, k) in enumerate(trip):
                for perm in permutations((i, j, k)):
                    lookup[perm] = n
            self._dense = vals[:, lookup].reshape(self.es.energies.shape[:-1] + (d, d, d))
        return self._dense


def second_exchange(
    es: StepEigensystem, first: np.ndarray, degeneracy_tol: float | None = None
) -> SecondExchangeTensor:
    return SecondExchangeTensor(es, first, degeneracy_tol)


def _check_dims(es: StepEigensystem, *mats: np.ndarray) -> None:
    for m in mats:
        if m.shape[-2:] != (es.dim, es.dim):
            raise ValueError(f"dimension mismatch: {m.shape[-2:]} vs eigensystem dim {es.dim}")


def step_first_derivative(es: StepEigensystem, first: np.ndarray, H_k: np.ndarray) -> np.ndarray:
    """``dU/dc_k = R ((R^dagger H_k R) * I) R^dagger``."""
    H_k = np.asarray(H_k)
    _check_dims(es, H_k)
    return from_eigenbasis(es, to_eigenbasis(es, H_k) * first)


def eigenbasis_second_derivative(
    A_k: np.ndarray, A_kp: np.ndarray, tensor: np.ndarray
) -> np.ndarray:
    """Second derivative in the eigenbasis from eigenbasis control matrices.

    ``D[m, n] = sum_p (A_kp[m, p] A_k[p, n] + A_k[m, p] A_kp[p, n]) II(n, p, m)``
    """
    return np.einsum("...mp,...pn,...mpn->...mn", A_kp, A_k, tensor) + np.einsum(
        "...mp,...pn,...mpn->...mn", A_k, A_kp, tensor
    )


def step_second_derivative(
    es: StepEigensystem, second: SecondExchangeTensor, H_k: np.ndarray, H_kp: np.ndarray
) -> np.ndarray:
    """``d^2 U / dc_k' dc_k`` for two controls acting in the same step."""
    H_k, H_kp = np.asarray(H_k), np.asarray(H_kp)
    _check_dims(es, H_k, H_kp)
    A_k = to_eigenbasis(es, H_k)
    A_kp = A_k if H_kp is H_k else to_eigenbasis(es, H_kp)
    return from_eigenbasis(es, eigenbasis_second_derivative(A_k, A_kp, second.dense()))


def taylor_step_derivatives(
    H0: np.ndarray,
    controls: np.ndarray,
    c_row: np.ndarray,
    dt: float,
    order: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Truncated Taylor propagator and exact derivatives of the truncation.

    ``U~ = sum_{l=0}^{L} X^l / l!`` with ``X = -i dt (H0 + sum_k c_k H_k)``.
    Derivatives are accumulated with the product rule on the scaled powers
    ``Q_l = X^l / l!``::

        dQ_l     = (Y_k Q_{l-1} + X dQ_{l-1}) / l
        d2Q_l    = (Y_k dQ_{l-1}[k'] + Y_k' dQ_{l-1}[k] + X d2Q_{l-1}) / l

    where ``Y_k = -i dt H_k``.

    Args:
        H0: drift, shape ``(d, d)``.
        controls: control Hamiltonians, shape ``(M, d, d)``.
        c_row: amplitudes, shape ``(..., M)``.
        dt: step duration.
        order: truncation order ``L >= 1``.

    Returns:
        ``(U, dU, d2U)`` with shapes ``(..., d, d)``, ``(..., M, d, d)`` and
        ``(..., M, M, d, d)``.
    """
    if order < 1:
        raise ValueError(f"Taylor truncation order must be >= 1, got {order}")
    controls = np.asarray(controls, dtype=complex)
    c_row = np.asarray(c_row, dtype=float)
    M, d = controls.shape[0], controls.shape[-1]
    X = -1j * dt * (H0 + np.einsum("...k,kij->...ij", c_row, controls))
    Y = -1j * dt * controls
    batch = X.shape[:-2]

    Q = np.broadcast_to(np.eye(d, dtype=complex), X.shape).copy()
    dQ = np.zeros(batch + (M, d, d), dtype=complex)
    d2Q = np.zeros(batch + (M, M, d, d), dtype=complex)
    U, dU, d2U = Q.copy(), dQ.copy(), d2Q.copy()
    Xk = X[..., None, :, :]
    Xkk = X[..., None, None, :, :]
    for l in range(1, order + 1):
        Ydq = matmul(Y[:, None], dQ[..., None, :, :, :])  # [k, k'] -> Y_k dQ[k']
        d2Q = (Ydq + np.swapaxes(Ydq, -3, -4) + matmul(Xkk, d2Q)) / l
        dQ = (matmul(Y, Q[..., None, :, :]) + matmul(Xk, dQ)) / l
        Q = matmul(X, Q) / l
        U += Q
        dU += dQ
        d2U += d2Q
    return U, dU, d2U
