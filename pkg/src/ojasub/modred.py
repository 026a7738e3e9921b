"""Projection-based model reduction for LTI systems ``dx/dt = Ax + Bu, y = Cx``.

The right dominant basis ``U`` (from ``A``) gives an observability-preserving
model, the left basis ``V`` (from ``A^T``) a controllability-preserving one,
and the oblique combination ``(A_U, (V^T U)^{-1} B_V, C_U)`` a minimal one.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .errors import (
    IllConditionedCoupling,
    NearPole,
    NotHurwitz,
    NotInvariant,
    ShapeMismatch,
    WeakTimescaleSeparation,
)
from .flow import FlowConfig
from .linalg import (
    StiefelPoint,
    as_matrix,
    as_square,
    eig_ordered,
    frame,
    orthonormal_complement,
    spectral_abscissa,
)
from .subspace import dominant_subspace

POLE_TOL = 1e-10
COUPLING_COND_MAX = 1e8
COUPLING_SIGMA_MIN = 1e-9
PAIR_INVARIANCE_TOL = 1e-6


@dataclass(frozen=True)
class LtiSystem:
    """State-space triple ``(A, B, C)`` with optional feedthrough ``D``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray | None = None
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        A = as_square(self.A, "A")
        B = as_matrix(self.B, "B")
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        C = as_matrix(C, "C")
        n = A.shape[0]
        if B.shape[0] != n:
            raise ShapeMismatch(f"B has {B.shape[0]} rows, A is {n}x{n}")
        if C.shape[1] != n:
            raise ShapeMismatch(f"C has {C.shape[1]} columns, A is {n}x{n}")
        D = np.zeros((C.shape[0], B.shape[1])) if self.D is None else as_matrix(np.atleast_2d(self.D), "D")
        if D.shape != (C.shape[0], B.shape[1]):
            raise ShapeMismatch(f"D must be {C.shape[0]}x{B.shape[1]}, got {D.shape}")
        for name, M in (("A", A), ("B", B), ("C", C), ("D", D)):
            M = M.copy()
            M.setflags(write=False)
            object.__setattr__(self, name, M)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class SubspacePair:
    """Right/left dominant bases, their complements and the coupling ``V^T U``."""

    U: StiefelPoint
    V: StiefelPoint
    U_perp: StiefelPoint
    V_perp: StiefelPoint
    coupling: np.ndarray
    coupling_condition: float

    @classmethod
    def from_bases(cls, U, V) -> "SubspacePair":
        U = U if isinstance(U, StiefelPoint) else StiefelPoint(U)
        V = V if isinstance(V, StiefelPoint) else StiefelPoint(V)
        if U.matrix.shape != V.matrix.shape:
            raise ShapeMismatch(f"U is {U.matrix.shape}, V is {V.matrix.shape}")
        R = V.matrix.T @ U.matrix
        s = np.linalg.svd(R, compute_uv=False)
        cond = float(s[0] / s[-1]) if s[-1] > 0 else math.inf
        return cls(U, V, orthonormal_complement(U), orthonormal_complement(V), R, cond)

    @property
    def r(self) -> int:
        return self.U.r

    def certify(self, A) -> "SubspacePair":
        """Check both block-triangular structures and invertibility of the coupling."""
        A = as_square(A, "A")
        U, V = self.U.certify().matrix, self.V.certify().matrix
        low = float(np.linalg.norm(self.U_perp.matrix.T @ A @ U))
        up = float(np.linalg.norm(V.T @ A @ self.V_perp.matrix))
        if low >= PAIR_INVARIANCE_TOL:
            raise NotInvariant(f"||U_perp^T A U||_F = {low:.3e}")
        if up >= PAIR_INVARIANCE_TOL:
            raise NotInvariant(f"||V^T A V_perp||_F = {up:.3e}")
        smin = float(np.linalg.svd(self.coupling, compute_uv=False)[-1])
        if smin <= COUPLING_SIGMA_MIN or self.coupling_condition > COUPLING_COND_MAX:
            raise IllConditionedCoupling(
                f"coupling V^T U has sigma_min {smin:.3e}, condition {self.coupling_condition:.3e}"
            )
        return self


def dual_pair(A, r: int, cfg: FlowConfig | None = None) -> SubspacePair:
    """Right and left ``r``-dominant bases from Oja flows on ``A`` and ``A^T``."""
    A = as_square(A, "A")
    U = dominant_subspace(A, r, cfg).basis
    V = dominant_subspace(A.T, r, cfg).basis
    return SubspacePair.from_bases(U, V).certify(A)


def project_system(sys: LtiSystem, W) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(W^T A W, W^T B, C W)``."""
    W = frame(W)
    if W.shape[0] != sys.n:
        raise ShapeMismatch(f"W has {W.shape[0]} rows, system order is {sys.n}")
    return W.T @ sys.A @ W, W.T @ sys.B, sys.C @ W


@dataclass(frozen=True)
class ReducedModel:
    kind: Literal["obs", "ctrl", "minimal"]
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    pair: SubspacePair | None = None

    @property
    def r(self) -> int:
        return self.A.shape[0]

    @property
    def D(self) -> np.ndarray:
        return np.zeros((self.C.shape[0], self.B.shape[1]))

    def form2(self) -> "ReducedModel":
        """The equivalent minimal realization ``(A_V, B_V, C_U R^{-1})``, ``R = V^T U``."""
        if self.kind != "minimal" or self.pair is None:
            raise ValueError("form2 is defined for minimal models built from a pair")
        R = self.pair.coupling
        return ReducedModel("minimal", R @ self.A @ np.linalg.inv(R), R @ self.B, np.linalg.solve(R.T, self.C.T).T, self.pair)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "r": self.r, "A": self.A.tolist(), "B": self.B.tolist(), "C": self.C.tolist()}


def obs_preserving_model(sys: LtiSystem, pair: SubspacePair) -> ReducedModel:
    return ReducedModel("obs", *project_system(sys, pair.U), pair=pair)


def ctrl_preserving_model(sys: LtiSystem, pair: SubspacePair) -> ReducedModel:
    return ReducedModel("ctrl", *project_system(sys, pair.V), pair=pair)


def minimal_reduced_model(sys: LtiSystem, pair: SubspacePair) -> ReducedModel:
    """``(A_U, (V^T U)^{-1} B_V, C_U)``."""
    R = pair.coupling
    smin = float(np.linalg.svd(R, compute_uv=False)[-1])
    if smin <= COUPLING_SIGMA_MIN or pair.coupling_condition > COUPLING_COND_MAX:
        raise IllConditionedCoupling(f"coupling condition {pair.coupling_condition:.3e}")
    A_U, _, C_U = project_system(sys, pair.U)
    B_V = pair.V.matrix.T @ sys.B
    return ReducedModel("minimal", A_U, np.linalg.solve(R, B_V), C_U, pair)


def reduced_model(sys: LtiSystem, pair: SubspacePair, kind: str) -> ReducedModel:
    builders = {"obs": obs_preserving_model, "ctrl": ctrl_preserving_model, "minimal": minimal_reduced_model}
    if kind not in builders:
        raise ValueError(f"unknown model kind {kind!r}")
    return builders[kind](sys, pair)


def _resolvent_apply(A: np.ndarray, s: complex, X: np.ndarray, poles=None) -> np.ndarray:
    """``(sI - A)^{-1} X`` with a pole-distance guard."""
    ev = np.linalg.eigvals(A) if poles is None else poles
    if ev.size:
        k = int(np.argmin(np.abs(ev - s)))
        if abs(ev[k] - s) <= POLE_TOL:
            raise NearPole(f"s = {s} is within {POLE_TOL:.0e} of the pole {ev[k]}", pole=complex(ev[k]))
    return np.linalg.solve(s * np.eye(A.shape[0]) - A, X.astype(complex))


def eval_transfer(model, s: complex, poles=None) -> np.ndarray:
    """``C (sI - A)^{-1} B + D`` by a linear solve (no explicit inverse)."""
    G = model.C @ _resolvent_apply(model.A, complex(s), model.B, poles)
    D = getattr(model, "D", None)
    return G + D if D is not None else G


@dataclass(frozen=True)
class FrequencyResponse:
    frequencies: np.ndarray
    values: np.ndarray  # (N, p, m) complex; NaN at flagged poles
    pole_flags: np.ndarray
    label: str = ""

    @property
    def magnitude_db(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 20.0 * np.log10(np.abs(self.values))

    @property
    def phase_deg(self) -> np.ndarray:
        raw = np.degrees(np.angle(self.values))
        out = np.full(raw.shape, np.nan)
        ok = ~self.pole_flags
        if ok.any():
            out[ok] = np.unwrap(raw[ok], period=360.0, axis=0)
        return out

    @property
    def is_zero(self) -> bool:
        v = self.values[~self.pole_flags]
        return bool(v.size) and bool(np.all(np.abs(v) == 0.0))


def frequency_response(model, frequencies, jobs: int = 1, label: str = "") -> FrequencyResponse:
    """Evaluate ``model`` at ``s = i w`` for each ``w``; poles are flagged, not fatal."""
    w = np.asarray(frequencies, dtype=float)
    poles = np.linalg.eigvals(model.A)
    p, m = model.C.shape[0], model.B.shape[1]

    def one(omega):
        try:
            return eval_transfer(model, 1j * omega, poles), False
        except NearPole:
            return np.full((p, m), np.nan + 0j), True

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(one, w))
    else:
        results = [one(x) for x in w]
    values = np.array([v for v, _ in results]).reshape(len(w), p, m)
    flags = np.array([f for _, f in results], dtype=bool)
    return FrequencyResponse(w, values, flags, label)


def bode_grid(models: Sequence, w_min: float, w_max: float, points: int, jobs: int = 1, labels=None) -> list[FrequencyResponse]:
    """Frequency responses of several models on a shared log-spaced grid."""
    if not 0 < w_min < w_max:
        raise ValueError("need 0 < w_min < w_max")
    if points < 2:
        raise ValueError("need at least two grid points")
    grid = np.logspace(math.log10(w_min), math.log10(w_max), points)
    labels = labels or [getattr(mdl, "kind", "full") for mdl in models]
    return [frequency_response(mdl, grid, jobs, lab) for mdl, lab in zip(models, labels)]


def lyapunov_gramian(A, M, T: float, steps: int = 2000) -> np.ndarray:
    """RK4 solution at ``T`` of ``dG/dt = A G + G A^T + M M^T``, ``G(0) = 0``."""
    if not T > 0:
        raise ValueError("T must be positive")
    A = as_square(A, "A")
    Q = M @ M.T
    h = T / steps

    def f(G):
        AG = A @ G
        return AG + AG.T + Q

    G = np.zeros_like(A)
    for _ in range(steps):
        k1 = f(G)
        k2 = f(G + 0.5 * h * k1)
        k3 = f(G + 0.5 * h * k2)
        k4 = f(G + h * k3)
        G = G + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        G = 0.5 * (G + G.T)
    return G


def reduced_gramian(sys: LtiSystem, pair: SubspacePair, side: Literal["obs", "ctrl"], T: float) -> np.ndarray:
    """Finite-horizon Gramian of the observability- or controllability-preserving model."""
    if side == "obs":
        A_U, _, C_U = project_system(sys, pair.U)
        return lyapunov_gramian(A_U.T, C_U.T, T)
    if side == "ctrl":
        A_V, B_V, _ = project_system(sys, pair.V)
        return lyapunov_gramian(A_V, B_V, T)
    raise ValueError(f"side must be 'obs' or 'ctrl', got {side!r}")


@dataclass(frozen=True)
class ErrorDecomposition:
    side: str
    P: np.ndarray
    P_reduced: np.ndarray
    P_perp: np.ndarray
    coupling_term: np.ndarray
    identity_residual: float


def error_decomposition(sys: LtiSystem, pair: SubspacePair, s: complex, side: Literal["U", "V"] = "U") -> ErrorDecomposition:
    """Split ``P(s)`` into reduced, complementary and coupling contributions.

    ``U`` side (block upper-triangular coordinates ``[U, U_perp]``)::

        P = P_U + C_perp (sI - A_perp)^{-1} B_perp
              + C_U (sI - A_U)^{-1} U^T A U_perp (sI - A_perp)^{-1} B_perp

    ``V`` side (block lower-triangular coordinates ``[V, V_perp]``)::

        P = P_V + C_Vperp (sI - A_Vperp)^{-1} B_Vperp
              + C_Vperp (sI - A_Vperp)^{-1} V_perp^T A V (sI - A_V)^{-1} B_V
    """
    s = complex(s)
    P = eval_transfer(sys, s)
    if side == "U":
        W, Wp = pair.U.matrix, pair.U_perp.matrix
    elif side == "V":
        W, Wp = pair.V.matrix, pair.V_perp.matrix
    else:
        raise ValueError(f"side must be 'U' or 'V', got {side!r}")
    A1, B1, C1 = project_system(sys, W)
    A2, B2, C2 = project_system(sys, Wp)
    X1B = _resolvent_apply(A1, s, B1)
    X2B = _resolvent_apply(A2, s, B2)
    P_red = C1 @ X1B
    P_perp = C2 @ X2B
    if side == "U":
        coupling = C1 @ _resolvent_apply(A1, s, W.T @ sys.A @ Wp @ X2B)
    else:
        coupling = C2 @ _resolvent_apply(A2, s, Wp.T @ sys.A @ W @ X1B)
    resid = float(np.linalg.norm(P - (P_red + P_perp + coupling)))
    return ErrorDecomposition(side, P, P_red, P_perp, coupling, resid)


def bridge_terms(sys: LtiSystem, pair: SubspacePair, s: complex) -> dict:
    """``P_rd`` directly and through its two expressions in terms of ``P_U`` and ``P_V``.

    ``P_rd = P_U + C_U (sI - A_U)^{-1} R^{-1} V^T U_perp B_Uperp``
    ``P_rd = P_V + C_Vperp V_perp^T U R^{-1} (sI - A_V)^{-1} B_V``
    """
    s = complex(s)
    U, V, Up, Vp, R = pair.U.matrix, pair.V.matrix, pair.U_perp.matrix, pair.V_perp.matrix, pair.coupling
    A_U, B_U, C_U = project_system(sys, U)
    A_V, B_V, C_V = project_system(sys, V)
    P_rd = eval_transfer(minimal_reduced_model(sys, pair), s)
    via_U = C_U @ _resolvent_apply(A_U, s, B_U + np.linalg.solve(R, V.T @ Up @ (Up.T @ sys.B)))
    corr = (sys.C @ Vp) @ (Vp.T @ U) @ np.linalg.solve(R, _resolvent_apply(A_V, s, B_V))
    via_V = C_V @ _resolvent_apply(A_V, s, B_V) + corr
    return {"P_rd": P_rd, "via_U": via_U, "via_V": via_V}


@dataclass(frozen=True)
class SlowFastModel:
    A_s: np.ndarray
    B_s: np.ndarray
    C_s: np.ndarray
    D_s: np.ndarray
    fast_block: np.ndarray
    U: StiefelPoint
    separation_ratio: float

    def as_system(self) -> LtiSystem:
        return LtiSystem(self.A_s, self.B_s, self.C_s, self.D_s)

    def dc_gain(self) -> np.ndarray:
        return -self.C_s @ np.linalg.solve(self.A_s, self.B_s) + self.D_s


def dc_gain(sys: LtiSystem) -> np.ndarray:
    return -sys.C @ np.linalg.solve(sys.A, sys.B) + sys.D


def slow_fast_reduce(sys: LtiSystem, r: int, cfg: FlowConfig | None = None, ratio_threshold: float = 5.0, U=None) -> SlowFastModel:
    """Singular-perturbation reduction onto the ``r`` slowest modes of a Hurwitz system.

    The fast coordinates are replaced by their quasi-steady state, giving
    ``B_s = B_U - (U^T A U_perp) A_perp^{-1} B_perp`` and the feedthrough
    ``D_s = -C U_perp A_perp^{-1} B_perp``, so the DC gain is preserved.

    Warns with :class:`WeakTimescaleSeparation` when
    ``|Re lambda_{r+1}| / |Re lambda_r|`` is below ``ratio_threshold``.
    """
    A = sys.A
    alpha = spectral_abscissa(A)
    if alpha >= 0:
        raise NotHurwitz(f"spectral abscissa {alpha:.6g} >= 0")
    ev = eig_ordered(A).eigenvalues
    if not 1 <= r < sys.n:
        raise ValueError(f"need 1 <= r < n, got r={r}")
    ratio = abs(ev[r].real) / abs(ev[r - 1].real)
    if ratio < ratio_threshold:
        warnings.warn(
            f"timescale ratio {ratio:.3g} below threshold {ratio_threshold:g}",
            WeakTimescaleSeparation,
            stacklevel=2,
        )
    Ubar = dominant_subspace(A, r, cfg).basis if U is None else (U if isinstance(U, StiefelPoint) else StiefelPoint(U))
    Um, Up = Ubar.matrix, orthonormal_complement(Ubar).matrix
    A_s, B_U, C_s = project_system(sys, Um)
    A_f, B_f, C_f = project_system(sys, Up)
    fast_inv_B = np.linalg.solve(A_f, B_f)
    B_s = B_U - (Um.T @ A @ Up) @ fast_inv_B
    D_s = sys.D - C_f @ fast_inv_B
    return SlowFastModel(A_s, B_s, C_s, D_s, A_f, Ubar, float(ratio))
