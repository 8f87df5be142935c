"""Gate infidelity with exact gradient and Hessian.

The infidelity of a piecewise-constant pulse is

    J = 1 - |Tr[P U P V^dagger] / dim|^2,   U = U_N ... U_1 U_0,

with ``P`` the projector on the computational subspace of dimension
``dim`` and ``V`` the target.  Derivatives are assembled from per-step
derivatives and the cumulative products

    right[j] = U_j ... U_1 U_0            (right[0] = U_0)
    left[j]  = U_N ... U_j                (left[N+1] = 1)

so that ``dU/dc_{j,k} = left[j+1] dU_j right[j-1]``.  The gradient costs
O(N) matrix products; the Hessian adds one trace contraction per pair of
parameters.

Parameters are flattened k-major: index ``k * N + j`` holds ``c_{j,k}``,
i.e. the N amplitudes of control 0 come first.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import propagation as prop
from .counters import matmul, tally

DIAGONALIZATION = "diagonalization"
TAYLOR = "taylor"


@dataclass(frozen=True)
class ControlPulse:
    """N x M grid of piecewise-constant amplitudes.

    Attributes:
        amplitudes: array of shape ``(N, M)``; row ``j`` is time step ``j``.
        dt: duration of one step.
        bounds: array of shape ``(M, 2)`` with ``[min, max]`` per control,
            or None for an unbounded pulse.
    """

    amplitudes: np.ndarray
    dt: float
    bounds: np.ndarray | None = None

    def __post_init__(self):
        amps = np.atleast_2d(np.asarray(self.amplitudes, dtype=float))
        if amps.ndim != 2 or amps.size == 0:
            raise ValueError(f"amplitudes must be a non-empty N x M array, got {amps.shape}")
        if not np.all(np.isfinite(amps)):
            raise ValueError("pulse amplitudes must be finite")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "amplitudes", amps)
        if self.bounds is not None:
            b = np.asarray(self.bounds, dtype=float).reshape(-1, 2)
            if b.shape[0] != amps.shape[1]:
                raise ValueError("need one [min, max] pair per control")
            if np.any(b[:, 0] >= b[:, 1]):
                raise ValueError("each bound needs min < max")
            object.__setattr__(self, "bounds", b)

    @property
    def n_steps(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def n_controls(self) -> int:
        return self.amplitudes.shape[1]

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    def flat(self) -> np.ndarray:
        return self.amplitudes.T.ravel().copy()

    def with_flat(self, x: np.ndarray) -> "ControlPulse":
        amps = np.asarray(x, dtype=float).reshape(self.n_controls, self.n_steps).T
        return ControlPulse(amps, self.dt, self.bounds)

    def flat_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-parameter lower and upper bounds in flat ordering."""
        if self.bounds is None:
            n = self.amplitudes.size
            return np.full(n, -np.inf), np.full(n, np.inf)
        lo = np.repeat(self.bounds[:, 0], self.n_steps)
        hi = np.repeat(self.bounds[:, 1], self.n_steps)
        return lo, hi

    def digest(self) -> str:
        h = hashlib.sha256(self.amplitudes.tobytes())
        h.update(np.float64(self.dt).tobytes())
        return h.hexdigest()


def flat_index(j: int, k: int, n_steps: int) -> int:
    return k * n_steps + j


@dataclass(frozen=True)
class BilinearSystem:
    """``H(t_j) = drift + sum_k c_{j,k} controls[k]`` with a gate target.

    ``projector`` is a diagonal 0/1 matrix selecting the subspace on which
    the target is scored; ``initial`` is the starting unitary.
    """

    drift: np.ndarray
    controls: np.ndarray
    projector: np.ndarray
    target: np.ndarray
    initial: np.ndarray | None = None

    def __post_init__(self):
        drift = np.asarray(self.drift, dtype=complex)
        d = drift.shape[0]
        controls = np.asarray(self.controls, dtype=complex).reshape(-1, d, d)
        projector = np.asarray(self.projector, dtype=complex)
        target = np.asarray(self.target, dtype=complex)
        initial = np.eye(d, dtype=complex) if self.initial is None else np.asarray(self.initial, dtype=complex)
        for name, m in (("drift", drift), ("projector", projector), ("target", target), ("initial", initial)):
            if m.shape != (d, d):
                raise ValueError(f"{name} has shape {m.shape}, expected {(d, d)}")
        if controls.shape[0] < 1:
            raise ValueError("need at least one control Hamiltonian")
        if not np.allclose(projector @ projector, projector, atol=1e-12):
            raise ValueError("projector is not idempotent")
        if np.real(np.trace(projector)) < 0.5:
            raise ValueError("projector has rank zero")
        for name, m in (("drift", drift), *((f"control {k}", c) for k, c in enumerate(controls))):
            if not np.allclose(m, m.conj().T, atol=1e-12 * max(1.0, np.abs(m).max())):
                raise ValueError(f"{name} is not Hermitian")
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "controls", controls)
        object.__setattr__(self, "projector", projector)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "initial", initial)

    @property
    def dim(self) -> int:
        return self.drift.shape[0]

    @property
    def dim_sub(self) -> int:
        return int(round(np.real(np.trace(self.projector))))

    @property
    def n_controls(self) -> int:
        return self.controls.shape[0]

    def hamiltonians(self, amplitudes: np.ndarray) -> np.ndarray:
        return self.drift + np.einsum("jk,kab->jab", amplitudes, self.controls)

    def subspace_states(self) -> np.ndarray:
        """Columns are the basis vectors spanning the projected subspace."""
        idx = np.flatnonzero(np.abs(np.diag(self.projector)) > 0.5)
        return np.eye(self.dim, dtype=complex)[:, idx]

    def with_target(self, target: np.ndarray) -> "BilinearSystem":
        return BilinearSystem(self.drift, self.controls, self.projector, target, self.initial)


@dataclass(frozen=True)
class GradHessResult:
    J: float
    grad: np.ndarray | None = None
    hess: np.ndarray | None = None


@dataclass
class PropagationCache:
    """Per-step propagators, their derivatives and the cumulative products.

    ``right`` has N + 1 entries (``right[0] = U_0``); ``left`` has N + 2
    entries indexed so that ``left[j] = U_N ... U_j`` for 1 <= j <= N and
    ``left[N + 1]`` is the identity; ``left[0]`` is unused.  ``steps[j - 1]``
    is ``U_j``.
    """

    pulse_digest: str
    dt: float
    backend: str
    steps: np.ndarray
    right: np.ndarray
    left: np.ndarray
    step_derivs: np.ndarray | None = None
    eigensystem: prop.StepEigensystem | None = None
    exchange: np.ndarray | None = None
    taylor_second: np.ndarray | None = None
    degeneracy_tol: float | None = None
    _second: prop.SecondExchangeTensor | None = field(default=None, repr=False)

    @property
    def n_steps(self) -> int:
        return self.steps.shape[0]

    @property
    def total(self) -> np.ndarray:
        return self.right[-1]

    @property
    def has_derivatives(self) -> bool:
        return self.step_derivs is not None

    def second_exchange(self) -> prop.SecondExchangeTensor:
        if self._second is None:
            self._second = prop.second_exchange(self.eigensystem, self.exchange, self.degeneracy_tol)
        return self._second


def build_cache(
    system: BilinearSystem,
    pulse: ControlPulse,
    with_derivatives: bool = True,
    backend: str = DIAGONALIZATION,
    taylor_order: int = 12,
    degeneracy_tol: float | None = None,
) -> PropagationCache:
    """Propagate ``pulse`` through ``system`` and store what derivatives need."""
    if pulse.n_controls != system.n_controls:
        raise ValueError(
            f"pulse has {pulse.n_controls} controls, system has {system.n_controls}"
        )
    N, d = pulse.n_steps, system.dim
    cache = _build_steps_only(system, pulse, with_derivatives, backend, taylor_order, degeneracy_tol)
    steps = cache.steps

    right = np.empty((N + 1, d, d), dtype=complex)
    right[0] = system.initial
    for j in range(1, N + 1):
        right[j] = matmul(steps[j - 1], right[j - 1])
    left = np.empty((N + 2, d, d), dtype=complex)
    left[N + 1] = np.eye(d)
    left[0] = 0.0
    for j in range(N, 0, -1):
        left[j] = matmul(left[j + 1], steps[j - 1])

    cache.right = right
    cache.left = left
    return cache


def _expand(es: prop.StepEigensystem) -> prop.StepEigensystem:
    """View an (N,)-batched eigensystem as (N, 1)-batched for broadcasting over controls."""
    return prop.StepEigensystem(es.energies[:, None], es.basis[:, None], es.dt)


def _weighted_target(system: BilinearSystem) -> np.ndarray:
    """``P V^dagger P``, so that ``Tr[P X P V^dagger] = Tr[X A]``."""
    P = system.projector
    return P @ system.target.conj().T @ P


def overlap(cache: PropagationCache, system: BilinearSystem) -> complex:
    return complex(np.trace(cache.total @ _weighted_target(system)))


def infidelity(cache: PropagationCache, system: BilinearSystem) -> float:
    """``J = 1 - |Tr[P U P V^dagger] / dim|^2``"""
    F = abs(overlap(cache, system) / system.dim_sub) ** 2
    return float(1.0 - F)


def _require_derivs(cache: PropagationCache) -> None:
    if not cache.has_derivatives:
        raise ValueError("cache was built without derivatives")


def _sandwich(cache: PropagationCache, A: np.ndarray) -> np.ndarray:
    """``right[j-1] A left[j+1]`` for j = 1..N, stacked along axis 0."""
    return matmul(matmul(cache.right[:-1], A), cache.left[2:])


def gradient(cache: PropagationCache, system: BilinearSystem) -> np.ndarray:
    """Gradient of J in k-major flat ordering."""
    _require_derivs(cache)
    A = _weighted_target(system)
    tr0 = np.trace(cache.total @ A)
    M = _sandwich(cache, A)
    t = np.einsum("jkab,jba->jk", cache.step_derivs, M)
    dF = 2.0 / system.dim_sub**2 * np.real(t * np.conj(tr0))
    return -dF.T.ravel()


def _same_step_traces(cache: PropagationCache, system: BilinearSystem, M: np.ndarray) -> np.ndarray:
    """``Tr[d2U_j/dc_{j,k} dc_{j,k'} M_j]`` with shape (N, M, M)."""
    if cache.backend == TAYLOR:
        return np.einsum("jklab,jba->jkl", cache.taylor_second, M)
    es = _expand(cache.eigensystem)
    A = prop.to_eigenbasis(es, system.controls[None])  # (N, M, d, d)
    Mt = prop.to_eigenbasis(cache.eigensystem, M)  # R^dagger M R
    T = cache.second_exchange().dense()  # (N, d, d, d), T[m, p, n] = II(n, p, m)
    # sum_{m,p,n} (A_l[m,p] A_k[p,n] + A_k[m,p] A_l[p,n]) T[m,p,n] Mt[n,m]
    half = np.einsum("jkmp,jlpn,jmpn,jnm->jkl", A, A, T, Mt, optimize=True)
    return half + np.swapaxes(half, 1, 2)


def _pair_traces(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """``G[x, y] = Tr[P_x Q_y]`` for every pair."""
    tally("pair", P.shape[0] * Q.shape[0])
    return np.einsum("xab,yba->xy", P, Q, optimize=True)


def hessian(cache: PropagationCache, system: BilinearSystem) -> np.ndarray:
    """Hessian of J in k-major flat ordering; exactly symmetric."""
    return _value_grad_hess(cache, system)[2]


def _value_grad_hess(cache: PropagationCache, system: BilinearSystem):
    _require_derivs(cache)
    N, Mc = cache.n_steps, system.n_controls
    n = N * Mc
    A = _weighted_target(system)
    tr0 = np.trace(cache.total @ A)
    scale = 2.0 / system.dim_sub**2

    M = _sandwich(cache, A)
    t = np.einsum("jkab,jba->jk", cache.step_derivs, M)  # (N, Mc)

    # P[j,k] = A left[j+1] dU_jk right[j-1];  Q[i,k] = right[i]^dagger dU_ik right[i-1]
    AL = matmul(A, cache.left[2:])
    P = matmul(matmul(AL[:, None], cache.step_derivs), cache.right[:-1, None])
    Q = matmul(
        matmul(np.conj(np.swapaxes(cache.right[1:], -1, -2))[:, None], cache.step_derivs),
        cache.right[:-1, None],
    )
    # time-major flat index j * Mc + k
    G = _pair_traces(P.reshape(n, *P.shape[-2:]), Q.reshape(n, *Q.shape[-2:]))
    S = np.tril(G, -1)
    step_of = np.repeat(np.arange(N), Mc)
    S = np.where(step_of[:, None] > step_of[None, :], S, 0.0)

    same = _same_step_traces(cache, system, M)  # (N, Mc, Mc)
    for j in range(N):
        S[j * Mc:(j + 1) * Mc, j * Mc:(j + 1) * Mc] = same[j]

    tf = t.reshape(n)
    second = scale * np.real(S * np.conj(tr0) + np.outer(tf, np.conj(tf)))
    second = np.tril(second)
    hF = second + np.tril(second, -1).T

    order = np.arange(n).reshape(N, Mc).T.ravel()  # k-major -> time-major positions
    hJ = -hF[np.ix_(order, order)]
    gJ = -(scale * np.real(t * np.conj(tr0))).T.ravel()
    J = float(1.0 - abs(tr0 / system.dim_sub) ** 2)
    return J, gJ, hJ


def evaluate(
    system: BilinearSystem,
    pulse: ControlPulse,
    order: int = 2,
    backend: str = DIAGONALIZATION,
    taylor_order: int = 12,
) -> GradHessResult:
    """Infidelity and, for ``order >= 1``/``2``, its gradient and Hessian."""
    cache = build_cache(system, pulse, order >= 1, backend, taylor_order)
    if order <= 0:
        return GradHessResult(infidelity(cache, system))
    if order == 1:
        return GradHessResult(infidelity(cache, system), gradient(cache, system))
    J, g, H = _value_grad_hess(cache, system)
    return GradHessResult(J, g, H)


class GateObjective:
    """Objective provider for the optimizers.

    Calling ``objective(x, order)`` returns ``(J, grad, hess)`` where the
    entries past ``order`` are None.  ``x`` is a flat parameter vector.
    """

    def __init__(
        self,
        system: BilinearSystem,
        template: ControlPulse,
        backend: str = DIAGONALIZATION,
        taylor_order: int = 12,
    ):
        self.system = system
        self.template = template
        self.backend = backend
        self.taylor_order = taylor_order

    def __call__(self, x: np.ndarray, order: int = 0):
        res = evaluate(self.system, self.template.with_flat(x), order, self.backend, self.taylor_order)
        return res.J, res.grad, res.hess


def state_transfer_objective(
    system: BilinearSystem,
    pulse: ControlPulse,
    states: np.ndarray | None = None,
    order: int = 2,
    backend: str = DIAGONALIZATION,
    taylor_order: int = 12,
) -> GradHessResult:
    """Infidelity of transferring each ``|psi_s>`` to ``V |psi_s>``.

    ``J = 1 - |sum_s <psi_s| V^dagger U |psi_s> / S|^2`` over the ``S``
    orthonormal columns of ``states`` (default: the projected subspace
    basis).  Only matrix-vector products touch the cumulative chain; second
    derivatives across steps use derivative states propagated forward
    through the remaining steps.
    """
    psi = system.subspace_states() if states is None else np.asarray(states, dtype=complex)
    if psi.ndim == 1:
        psi = psi[:, None]
    S = psi.shape[1]
    if not np.allclose(psi.conj().T @ psi, np.eye(S), atol=1e-10):
        raise ValueError("states are not orthonormal")

    cache = _build_steps_only(system, pulse, order >= 1, backend, taylor_order)
    N, Mc, d = pulse.n_steps, system.n_controls, system.dim
    U = cache.steps

    right = np.empty((N + 1, d, S), dtype=complex)
    right[0] = system.initial @ psi
    for j in range(1, N + 1):
        right[j] = U[j - 1] @ right[j - 1]
    tally("matvec", N * S)
    # rows of left[j] are <psi_s| V^dagger U_N ... U_j
    left = np.empty((N + 2, S, d), dtype=complex)
    left[N + 1] = (system.target @ psi).conj().T
    for j in range(N, 0, -1):
        left[j] = left[j + 1] @ U[j - 1]
    tally("matvec", N * S)

    tr0 = np.trace(left[N + 1] @ right[N])
    J = float(1.0 - abs(tr0 / S) ** 2)
    if order <= 0:
        return GradHessResult(J)

    scale = 2.0 / S**2
    dU = cache.step_derivs  # (N, Mc, d, d)
    t = np.einsum("jsa,jkab,jbs->jk", left[2:], dU, right[:-1])
    grad = -(scale * np.real(t * np.conj(tr0))).T.ravel()
    if order == 1:
        return GradHessResult(J, grad)

    n = N * Mc
    Ssec = np.zeros((n, n), dtype=complex)
    # M_j = right[j-1] left[j+1] (rank-S), so Tr[d2U_j M_j] = sum_s <l| d2U |r>
    Mj = np.einsum("jas,jsb->jab", right[:-1], left[2:])
    same = _same_step_traces(cache, system, Mj)
    deriv_states = np.zeros((n, d, S), dtype=complex)  # time-major (i, k')
    for j in range(1, N + 1):
        rows = slice((j - 1) * Mc, j * Mc)
        active = (j - 1) * Mc
        if active:
            Ssec[rows, :active] = np.einsum(
                "sa,kab,xbs->kx", left[j + 1], dU[j - 1], deriv_states[:active]
            )
            deriv_states[:active] = U[j - 1] @ deriv_states[:active]
            tally("matvec", 2 * active * S)
        Ssec[rows, rows] = same[j - 1]
        deriv_states[rows] = dU[j - 1] @ right[j - 1]
        tally("matvec", Mc * S)

    tf = t.reshape(n)
    second = scale * np.real(Ssec * np.conj(tr0) + np.outer(tf, np.conj(tf)))
    second = np.tril(second)
    hF = second + np.tril(second, -1).T
    order_idx = np.arange(n).reshape(N, Mc).T.ravel()
    return GradHessResult(J, grad, -hF[np.ix_(order_idx, order_idx)])


def _build_steps_only(
    system, pulse, with_derivatives, backend, taylor_order, degeneracy_tol=None
) -> PropagationCache:
    """Per-step data without the cumulative chains."""
    if pulse.n_controls != system.n_controls:
        raise ValueError(
            f"pulse has {pulse.n_controls} controls, system has {system.n_controls}"
        )
    dt = pulse.dt
    if backend == DIAGONALIZATION:
        es = prop.eig_hermitian(system.hamiltonians(pulse.amplitudes), dt)
        steps = prop.step_propagator(es)
        exchange = derivs = None
        if with_derivatives:
            exchange = prop.first_exchange(es, degeneracy_tol)
            A = prop.to_eigenbasis(_expand(es), system.controls[None])
            derivs = prop.from_eigenbasis(_expand(es), A * exchange[:, None])
        return PropagationCache(pulse.digest(), dt, backend, steps, np.empty(0), np.empty(0),
                                derivs, es, exchange, degeneracy_tol=degeneracy_tol)
    if backend == TAYLOR:
        steps, derivs, second = prop.taylor_step_derivatives(
            system.drift, system.controls, pulse.amplitudes, dt, taylor_order
        )
        if not with_derivatives:
            derivs = second = None
        return PropagationCache(pulse.digest(), dt, backend, steps, np.empty(0), np.empty(0),
                                derivs, taylor_second=second)
    raise ValueError(f"unknown propagator backend {backend!r}")
