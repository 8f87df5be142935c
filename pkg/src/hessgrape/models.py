"""Built-in control problems.

* Two dispersively coupled transmons (three levels each) after eliminating
  the cavity, driven on transmon 1, with a CNOT target on the qubit
  subspace.
* A two-level toy problem ``H = sigma_x + c(t) sigma_z`` targeting an X gate.

Frequencies are angular (rad/ns); :class:`TransmonParams` takes GHz.
Basis ordering for two transmons is ``|n1 n2>`` with ``n2`` running fastest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .objective import BilinearSystem

TWO_PI = 2.0 * np.pi

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


@dataclass(frozen=True)
class TransmonParams:
    """Circuit parameters in GHz (ordinary frequency, not angular)."""

    omega1: float = 5.0
    omega2: float = 5.5
    anharm1: float = -0.350
    anharm2: float = -0.350
    omega_r: float = 7.5
    g1: float = 0.100
    g2: float = 0.100
    drive_max: float = 0.200
    levels: int = 3


@dataclass(frozen=True)
class DerivedCouplings:
    """Effective qutrit-qutrit parameters, angular frequency (rad/ns)."""

    J: float
    dressed1: float
    dressed2: float
    detuning: float


def derived_couplings(p: TransmonParams) -> DerivedCouplings:
    """Cavity-eliminated coupling and dressed frequencies.

    Raises:
        ValueError: if either transmon is resonant with the cavity.
    """
    w1, w2, wr = TWO_PI * p.omega1, TWO_PI * p.omega2, TWO_PI * p.omega_r
    g1, g2 = TWO_PI * p.g1, TWO_PI * p.g2
    d1, d2 = w1 - wr, w2 - wr
    if d1 == 0 or d2 == 0:
        raise ValueError("transmon-cavity detuning is zero; dispersive elimination does not apply")
    J = g1 * g2 * (d1 + d2) / (d1 * d2)
    dressed1 = w1 + g1**2 / d1
    dressed2 = w2 + g2**2 / d2
    return DerivedCouplings(J=J, dressed1=dressed1, dressed2=dressed2, detuning=dressed1 - dressed2)


def _ladder(levels: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, levels)), 1).astype(complex)


def transmon_effective_system(p: TransmonParams | None = None) -> BilinearSystem:
    """Effective two-transmon Hamiltonian in the frame rotating at the dressed
    frequency of transmon 2, with the drive on transmon 1 as the only control.

        H0 = Delta n1 + sum_j (delta_j / 2) n_j (n_j - 1) + J (b1^+ b2 + b1 b2^+)
        H1 = b1^+ + b1
    """
    p = TransmonParams() if p is None else p
    c = derived_couplings(p)
    n = p.levels
    b = _ladder(n)
    eye = np.eye(n)
    b1 = np.kron(b, eye)
    b2 = np.kron(eye, b)
    n1 = b1.conj().T @ b1
    n2 = b2.conj().T @ b2
    I = np.eye(n * n)
    drift = (
        c.detuning * n1
        + 0.5 * TWO_PI * p.anharm1 * n1 @ (n1 - I)
        + 0.5 * TWO_PI * p.anharm2 * n2 @ (n2 - I)
        + c.J * (b1.conj().T @ b2 + b1 @ b2.conj().T)
    )
    control = b1.conj().T + b1
    target, projector = cnot_target(n)
    return BilinearSystem(drift, control[None], projector, target)


def qubit_indices(levels: int = 3) -> list[int]:
    return [i * levels + j for i in (0, 1) for j in (0, 1)]


def cnot_target(levels: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """CNOT (control = transmon 1) embedded in the two-transmon space.

    Acts as identity outside the qubit subspace.  Returns
    ``(target, projector)``.
    """
    dim = levels * levels
    idx = qubit_indices(levels)
    cnot = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
    target = np.eye(dim, dtype=complex)
    target[np.ix_(idx, idx)] = cnot
    projector = np.zeros((dim, dim), dtype=complex)
    projector[idx, idx] = 1.0
    return target, projector


def drive_bounds(p: TransmonParams | None = None) -> np.ndarray:
    p = TransmonParams() if p is None else p
    return np.array([[-TWO_PI * p.drive_max, TWO_PI * p.drive_max]])


def two_level_example() -> BilinearSystem:
    """``H = sigma_x + c sigma_z`` with target X on the full qubit."""
    return BilinearSystem(SIGMA_X, SIGMA_Z[None], np.eye(2), SIGMA_X)
