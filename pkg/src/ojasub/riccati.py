"""Projector dynamics of the Oja flow.

``P = U U^T`` obeys a matrix Riccati equation.  This module evaluates its
right-hand side, integrates it, and provides two closed-form solutions
(the explicit Riccati solution and the projector onto the span of the
linear flow ``eps dZ/dt = A Z``).  They serve as cross-checks for the
frame integrator in :mod:`ojasub.flow`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import RankDeficient, ShapeMismatch, SingularSolve
from .linalg import RANK_RTOL, as_square, frame, matrix_exponential

RANK_ATOL = 1e-9


def _sym(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


@dataclass(frozen=True)
class ProjectorState:
    """Symmetric ``n x n`` matrix ``P`` (nominally ``U U^T``) and its numerical rank."""

    P: np.ndarray
    rank_estimate: int = -1

    def __post_init__(self):
        P = _sym(as_square(self.P, "P"))
        P.setflags(write=False)
        object.__setattr__(self, "P", P)
        s = np.linalg.svd(P, compute_uv=False) if P.size else np.zeros(0)
        object.__setattr__(self, "rank_estimate", int(np.sum(s > RANK_ATOL)))

    @classmethod
    def from_frame(cls, U) -> "ProjectorState":
        U = frame(U)
        return cls(U @ U.T)

    @property
    def n(self) -> int:
        return self.P.shape[0]

    def idempotence_error(self) -> float:
        return float(np.linalg.norm(self.P @ self.P - self.P))


def _as_P(P) -> np.ndarray:
    return P.P if isinstance(P, ProjectorState) else _sym(as_square(P, "P"))


def riccati_rhs(P, A, epsilon: float = 1.0) -> np.ndarray:
    """``(1/eps)(A P + P A^T - P (A + A^T) P)``."""
    P = _as_P(P)
    A = as_square(A, "A")
    if A.shape != P.shape:
        raise ShapeMismatch(f"A is {A.shape}, P is {P.shape}")
    AP = A @ P
    return _sym(AP + AP.T - P @ (A + A.T) @ P) / epsilon


def _nearest_projector(P: np.ndarray, k: int) -> np.ndarray:
    V = np.linalg.eigh(P)[1][:, -k:]
    return V @ V.T


def integrate_riccati(
    P0, A, t: float, epsilon: float = 1.0, step_h: float = 1e-3, retract: bool | None = None
) -> ProjectorState:
    """Classical RK4 integration of :func:`riccati_rhs` from ``P0`` up to time ``t``.

    The kernel of a projector is an unstable equilibrium direction of this
    equation, so round-off there grows like ``exp(2 lambda t)``.  With
    ``retract`` (default: whenever ``P0`` is an orthogonal projector) each
    step is followed by replacement with the nearest rank-``k`` projector.
    """
    P = _as_P(P0).copy()
    A = as_square(A, "A")
    if A.shape != P.shape:
        raise ShapeMismatch(f"A is {A.shape}, P0 is {P.shape}")
    if retract is None:
        retract = float(np.linalg.norm(P @ P - P)) < 1e-8
    k = int(round(np.trace(P)))
    if t <= 0:
        return ProjectorState(P)
    n_steps = max(1, int(math.ceil(t / step_h - 1e-9)))
    h = t / n_steps
    for _ in range(n_steps):
        k1 = riccati_rhs(P, A, epsilon)
        k2 = riccati_rhs(P + 0.5 * h * k1, A, epsilon)
        k3 = riccati_rhs(P + 0.5 * h * k2, A, epsilon)
        k4 = riccati_rhs(P + h * k3, A, epsilon)
        P = _sym(P + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        if retract and k > 0:
            P = _nearest_projector(P, k)
    return ProjectorState(P)


CHUNK_SPREAD = 4.0


def _chunks(A: np.ndarray, t: float, epsilon: float) -> tuple[int, float]:
    """Split ``[0, t]`` so that ``||A||_2 dt / eps <= 4`` on every piece."""
    norm = float(np.linalg.norm(A, 2)) if A.size else 0.0
    k = max(1, int(math.ceil(norm * t / (epsilon * CHUNK_SPREAD))))
    return k, t / k


def _closed_form_step(A, P0, dt, epsilon) -> np.ndarray:
    w, V = np.linalg.eigh(P0)
    keep = w > RANK_ATOL
    if not keep.any():
        return np.zeros_like(P0)
    F = V[:, keep] * np.sqrt(w[keep])
    k = F.shape[1]
    E = matrix_exponential(A, dt / epsilon)
    Q, R = np.linalg.qr(E @ F)
    rd = np.abs(np.diag(R))
    if rd.min() <= RANK_RTOL * rd.max():
        raise SingularSolve("exp(A t) P0 lost rank; I + G(t) P0 is numerically singular")
    D = np.eye(k) - F.T @ F
    Rinv = np.linalg.solve(R, np.eye(k))
    K = np.eye(k) + Rinv.T @ D @ Rinv
    if np.linalg.cond(K) > 1.0 / np.finfo(float).eps:
        raise SingularSolve("I + G(t) P0 is numerically singular; is (A + A^T)/2 > 0?")
    return _sym(Q @ np.linalg.solve(_sym(K), Q.T))


def riccati_closed_form(A, P0, t: float, epsilon: float = 1.0) -> ProjectorState:
    """Explicit solution ``P(t) = E P0 (I + G P0)^{-1} E^T`` with ``E = exp(A t/eps)``.

    ``G = E^T E - I``.  Writing ``P0 = F F^T`` (rank ``k``), the push-through
    identity turns the ``n x n`` inverse into a ``k x k`` one:
    ``P(t) = (E F) (I_k - F^T F + (E F)^T (E F))^{-1} (E F)^T``.
    With ``E F = Q R`` this is evaluated as ``Q (I + R^{-T} D R^{-1})^{-1} Q^T``,
    ``D = I_k - F^T F``, which avoids squaring the conditioning of ``E F``.

    The solution map is a semigroup, so long horizons are covered by
    applying the formula on sub-intervals with ``||A|| dt / eps <= 4``;
    otherwise the columns of ``E F`` become numerically parallel.

    Requires ``(A + A^T)/2`` positive definite (shift ``A`` beforehand);
    otherwise the inner matrix can become singular.
    """
    A = as_square(A, "A")
    P = _as_P(P0)
    if A.shape != P.shape:
        raise ShapeMismatch(f"A is {A.shape}, P0 is {P.shape}")
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return ProjectorState(P.copy())
    k, dt = _chunks(A, t, epsilon)
    for _ in range(k):
        P = _closed_form_step(A, P, dt, epsilon)
    return ProjectorState(P)


def projector_from_linear_flow(A, Z0, t: float, epsilon: float = 1.0) -> ProjectorState:
    """Orthogonal projector onto ``span(exp(A t/eps) Z0)``.

    This is ``Z (Z^T Z)^{-1} Z^T`` for ``Z = exp(A t/eps) Z0``, computed from a
    QR factorization of ``Z`` rather than by inverting the Gram matrix.  The
    span is propagated over sub-intervals (``||A|| dt / eps <= 4``) with a QR
    after each, which leaves it unchanged in exact arithmetic.
    """
    A = as_square(A, "A")
    Z = frame(Z0)
    if A.shape[0] != Z.shape[0]:
        raise ShapeMismatch(f"A is {A.shape}, Z0 is {Z.shape}")
    s = np.linalg.svd(Z, compute_uv=False)
    if s[-1] <= RANK_RTOL * s[0]:
        raise RankDeficient("Z0 must have full column rank")
    Q = np.linalg.qr(Z)[0]
    if t != 0:
        k, dt = _chunks(A, abs(t), epsilon)
        E = matrix_exponential(A, math.copysign(dt, t) / epsilon)
        for _ in range(k):
            Q, R = np.linalg.qr(E @ Q)
            rd = np.abs(np.diag(R))
            if rd.min() <= RANK_RTOL * rd.max():
                raise RankDeficient("exp(A t) Z0 is numerically rank deficient")
    return ProjectorState(Q @ Q.T)
