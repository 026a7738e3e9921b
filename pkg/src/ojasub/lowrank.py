"""Low-rank stabilization on the reduced pairs.

Gains are designed for the ``r``-dimensional pairs ``(A_V, B_V)`` and
``(A_U^T, C_U^T)`` by LQR and embedded as ``B F_r V^T`` and ``U L_r C``.
Only the dominant part of the spectrum moves; the remaining ``n - r``
eigenvalues of ``A`` are kept.  Every design is verified on the full-order
closed loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DesignFailed, MissingGain, NotStabilizable, ShapeMismatch
from .linalg import as_matrix, as_square, eig_ordered, spectral_abscissa
from .modred import LtiSystem, SubspacePair, project_system

IMAG_AXIS_TOL = 1e-8
CARE_RTOL = 1e-8


def care_small(A_r, B_r, Q=None, R=None) -> np.ndarray:
    """Stabilizing solution of ``A^T P + P A - P B R^{-1} B^T P + Q = 0``.

    Computed from the stable invariant subspace ``[X1; X2]`` of the
    Hamiltonian ``[[A, -B R^{-1} B^T], [-Q, -A^T]]`` as ``P = X2 X1^{-1}``.

    Raises
    ------
    NotStabilizable
        The Hamiltonian has eigenvalues within ``1e-8`` of the imaginary
        axis, ``X1`` is singular, or the residual check fails.
    """
    A = as_square(A_r, "A_r")
    r = A.shape[0]
    B = as_matrix(B_r, "B_r")
    if B.shape[0] != r:
        raise ShapeMismatch(f"B_r has {B.shape[0]} rows, A_r is {r}x{r}")
    Q = np.eye(r) if Q is None else as_square(Q, "Q")
    R = np.eye(B.shape[1]) if R is None else as_square(R, "R")
    if Q.shape != (r, r) or R.shape != (B.shape[1],) * 2:
        raise ShapeMismatch("Q must be r x r and R must be q x q")
    S = B @ np.linalg.solve(R, B.T)
    H = np.block([[A, -S], [-Q, -A.T]])
    spec = eig_ordered(-H)
    dist = float(np.min(np.abs(spec.eigenvalues.real)))
    if dist < IMAG_AXIS_TOL:
        raise NotStabilizable(f"Hamiltonian eigenvalue within {dist:.3e} of the imaginary axis")
    X = spec.leading(r)
    X1, X2 = X[:r], X[r:]
    s = np.linalg.svd(X1, compute_uv=False)
    if s[-1] <= 1e-12 * max(s[0], 1.0):
        raise NotStabilizable("stable Hamiltonian subspace is not a graph (X1 singular)")
    P = np.linalg.solve(X1.T, X2.T).T
    P = 0.5 * (P + P.T)
    res = care_residual(A, B, Q, R, P)
    if res >= CARE_RTOL * (1.0 + float(np.linalg.norm(P))):
        raise NotStabilizable(f"CARE residual {res:.3e} too large")
    return P


def care_residual(A, B, Q, R, P) -> float:
    return float(np.linalg.norm(A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q))


def spectrum_match_error(a, b) -> float:
    """Largest pairwise distance under the optimal one-to-one matching of two eigenvalue lists."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"spectra of different sizes {a.shape} and {b.shape}")
    if a.size == 0:
        return 0.0
    cost = np.abs(a[:, None] - b[None, :])
    i, j = linear_sum_assignment(cost)
    return float(cost[i, j].max())


@dataclass(frozen=True)
class GainDesign:
    U: np.ndarray
    V: np.ndarray
    L_r: np.ndarray | None = None
    F_r: np.ndarray | None = None
    closed_loop_observer_abscissa: float | None = None
    closed_loop_feedback_abscissa: float | None = None
    observer_split_error: float | None = None
    feedback_split_error: float | None = None
    care_residuals: tuple = ()

    @property
    def embedded_L(self) -> np.ndarray | None:
        return None if self.L_r is None else self.U @ self.L_r

    @property
    def embedded_F(self) -> np.ndarray | None:
        return None if self.F_r is None else self.F_r @ self.V.T

    def merge(self, other: "GainDesign") -> "GainDesign":
        """Combine an observer design and a feedback design on the same pair."""
        pick = lambda x, y: x if x is not None else y  # noqa: E731
        return GainDesign(
            self.U,
            self.V,
            pick(self.L_r, other.L_r),
            pick(self.F_r, other.F_r),
            pick(self.closed_loop_observer_abscissa, other.closed_loop_observer_abscissa),
            pick(self.closed_loop_feedback_abscissa, other.closed_loop_feedback_abscissa),
            pick(self.observer_split_error, other.observer_split_error),
            pick(self.feedback_split_error, other.feedback_split_error),
            self.care_residuals + other.care_residuals,
        )

    def to_dict(self) -> dict:
        def mat(M):
            return None if M is None else M.tolist()

        return {
            "r": self.U.shape[1],
            "L_r": mat(self.L_r),
            "F_r": mat(self.F_r),
            "embedded_L": mat(self.embedded_L),
            "embedded_F": mat(self.embedded_F),
            "closed_loop_observer_abscissa": self.closed_loop_observer_abscissa,
            "closed_loop_feedback_abscissa": self.closed_loop_feedback_abscissa,
            "observer_split_error": self.observer_split_error,
            "feedback_split_error": self.feedback_split_error,
            "care_residuals": list(self.care_residuals),
        }


def _untouched(A: np.ndarray, r: int) -> np.ndarray:
    return eig_ordered(A).eigenvalues[r:]


def observer_design_from_gain(sys: LtiSystem, pair: SubspacePair, L_r, care_res=()) -> GainDesign:
    """Verify a given reduced observer gain ``L_r`` on the full-order error dynamics."""
    U = pair.U.matrix
    L_r = as_matrix(L_r, "L_r")
    if L_r.shape != (pair.r, sys.p):
        raise ShapeMismatch(f"L_r must be {pair.r}x{sys.p}, got {L_r.shape}")
    A_U, _, C_U = project_system(sys, U)
    Acl = sys.A - U @ L_r @ sys.C
    alpha = spectral_abscissa(Acl)
    expected = np.concatenate([np.linalg.eigvals(A_U - L_r @ C_U), _untouched(sys.A, pair.r)])
    split = spectrum_match_error(np.linalg.eigvals(Acl), expected)
    design = GainDesign(U, pair.V.matrix, L_r=L_r, closed_loop_observer_abscissa=alpha,
                        observer_split_error=split, care_residuals=tuple(care_res))
    if not alpha < 0:
        raise DesignFailed(f"observer error dynamics not Hurwitz (abscissa {alpha:.6g})", abscissa=alpha)
    return design


def feedback_design_from_gain(sys: LtiSystem, pair: SubspacePair, F_r, care_res=()) -> GainDesign:
    """Verify a given reduced feedback gain ``F_r`` on the full-order closed loop."""
    V = pair.V.matrix
    F_r = as_matrix(F_r, "F_r")
    if F_r.shape != (sys.m, pair.r):
        raise ShapeMismatch(f"F_r must be {sys.m}x{pair.r}, got {F_r.shape}")
    A_V, B_V, _ = project_system(sys, V)
    Acl = sys.A - sys.B @ F_r @ V.T
    alpha = spectral_abscissa(Acl)
    expected = np.concatenate([np.linalg.eigvals(A_V - B_V @ F_r), _untouched(sys.A, pair.r)])
    split = spectrum_match_error(np.linalg.eigvals(Acl), expected)
    design = GainDesign(pair.U.matrix, V, F_r=F_r, closed_loop_feedback_abscissa=alpha,
                        feedback_split_error=split, care_residuals=tuple(care_res))
    if not alpha < 0:
        raise DesignFailed(f"closed loop not Hurwitz (abscissa {alpha:.6g})", abscissa=alpha)
    return design


def design_feedback(sys: LtiSystem, pair: SubspacePair, Q=None, R=None) -> GainDesign:
    """LQR state feedback ``u = -F_r V^T x`` designed on ``(A_V, B_V)``."""
    A_V, B_V, _ = project_system(sys, pair.V)
    R = np.eye(sys.m) if R is None else as_square(R, "R")
    Q = np.eye(pair.r) if Q is None else as_square(Q, "Q")
    P = care_small(A_V, B_V, Q, R)
    F_r = np.linalg.solve(R, B_V.T @ P)
    return feedback_design_from_gain(sys, pair, F_r, (care_residual(A_V, B_V, Q, R, P),))


def design_observer(sys: LtiSystem, pair: SubspacePair, Q=None, R=None) -> GainDesign:
    """Luenberger gain ``U L_r`` designed on the dual pair ``(A_U^T, C_U^T)``."""
    A_U, _, C_U = project_system(sys, pair.U)
    R = np.eye(sys.p) if R is None else as_square(R, "R")
    Q = np.eye(pair.r) if Q is None else as_square(Q, "Q")
    P = care_small(A_U.T, C_U.T, Q, R)
    L_r = np.linalg.solve(R, C_U @ P).T
    return observer_design_from_gain(sys, pair, L_r, (care_residual(A_U.T, C_U.T, Q, R, P),))


def closed_loop_assemble(sys: LtiSystem, design: GainDesign) -> np.ndarray:
    """Cascade ``[[A - B F V^T, B F V^T], [0, A - U L C]]`` in state/error coordinates."""
    if design.F_r is None or design.L_r is None:
        raise MissingGain("both the feedback and the observer gain are required")
    BF = sys.B @ design.embedded_F
    n = sys.n
    return np.block([[sys.A - BF, BF], [np.zeros((n, n)), sys.A - design.embedded_L @ sys.C]])


def observer_matrices(sys: LtiSystem, design: GainDesign) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(A - U L C, B, U L)`` so that ``dx_hat/dt = (A - U L C) x_hat + B u + U L y``."""
    if design.L_r is None:
        raise MissingGain("observer gain missing")
    UL = design.embedded_L
    return sys.A - UL @ sys.C, sys.B, UL
