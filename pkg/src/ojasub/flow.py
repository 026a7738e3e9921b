"""Oja flow integrator with spectral-shift stabilization.

The flow ``eps dU/dt = (I - U U^T)(A + a I) U`` is integrated with a fixed
step.  On the Stiefel manifold the shift ``a`` does not change the vector
field; off the manifold it makes ``St(r, n)`` exponentially attracting once
``(A + A^T)/2 + a I`` is positive definite.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from .errors import Diverged, RankDeficient, ShapeMismatch
from .linalg import (
    DENSE_LIMIT,
    RANK_RTOL,
    StiefelPoint,
    as_matrix,
    as_square,
    frame,
    ortho_residual,
    qr_orthonormalize,
    svd_small,
)

DIVERGENCE_NORM = 1e6


@dataclass(frozen=True)
class FlowConfig:
    """Integration settings.

    ``shift_a=None`` selects :func:`stabilizing_shift` with ``shift_margin``;
    ``step_h=None`` selects :func:`default_step`.  ``retract_every=k``
    re-orthonormalizes the iterate by QR every ``k`` steps.  ``sample_every``
    decimates the recorded trace; convergence is only tested at samples.
    """

    epsilon: float = 1.0
    shift_a: float | None = None
    shift_margin: float = 0.5
    step_h: float | None = None
    t_max: float = 200.0
    integrator: Literal["rk4", "euler"] = "rk4"
    retract_every: int | None = None
    tol_invariance: float = 1e-7
    tol_ortho: float = 1e-8
    seed: int = 42
    sample_every: int = 1
    stop_on_convergence: bool = True

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.shift_a is not None and self.shift_a < 0:
            raise ValueError("shift_a must be non-negative")
        if self.shift_margin < 0:
            raise ValueError("shift_margin must be non-negative")
        if self.step_h is not None and not self.step_h > 0:
            raise ValueError("step_h must be positive")
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if self.integrator not in ("rk4", "euler"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.retract_every is not None and self.retract_every < 1:
            raise ValueError("retract_every must be a positive step count")
        if not (self.tol_invariance > 0 and self.tol_ortho > 0):
            raise ValueError("tolerances must be positive")
        if self.sample_every < 1:
            raise ValueError("sample_every must be >= 1")

    def with_(self, **changes) -> "FlowConfig":
        return replace(self, **changes)

    def resolve(self, A: np.ndarray) -> tuple[float, float]:
        """Concrete ``(shift_a, step_h)`` for the matrix ``A``."""
        a = stabilizing_shift(A, self.shift_margin) if self.shift_a is None else self.shift_a
        h = default_step(A, a, self.epsilon) if self.step_h is None else self.step_h
        return float(a), float(h)


def default_step(A, shift_a: float, epsilon: float = 1.0) -> float:
    """``min(0.01, 0.1 eps / (1 + a + ||A||_F))``; scales with the stiffest term."""
    return min(0.01, 0.1 * epsilon / (1.0 + shift_a + float(np.linalg.norm(A))))


@dataclass(frozen=True)
class FlowTrace:
    times: np.ndarray
    stiefel_residuals: np.ndarray
    invariance_residuals: np.ndarray
    final: StiefelPoint
    converged: bool
    rate_estimate: float
    shift_a: float
    step_h: float
    projector_distances: np.ndarray | None = None

    def to_csv(self, path=None) -> str:
        """Serialize as ``t,stiefel_residual,invariance_residual``; optionally write ``path``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "stiefel_residual", "invariance_residual"])
        for t, s, v in zip(self.times, self.stiefel_residuals, self.invariance_residuals):
            w.writerow([f"{t:.17g}", f"{s:.17g}", f"{v:.17g}"])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def oja_rhs(U, A, epsilon: float = 1.0, shift_a: float = 0.0) -> np.ndarray:
    """``(1/eps)(I - U U^T)(A + a I) U`` without forming ``I - U U^T``."""
    U = frame(U)
    A = as_square(A, "A")
    if A.shape[0] != U.shape[0]:
        raise ShapeMismatch(f"A is {A.shape}, U is {U.shape}")
    W = A @ U + shift_a * U
    return (W - U @ (U.T @ W)) / epsilon


def stabilizing_shift(A, margin: float = 0.5) -> float:
    """Smallest shift making ``(A + A^T)/2 + a I`` positive semidefinite, plus ``margin``.

    Above the dense limit the cheap bound ``||A||_F + margin`` is used.
    """
    if margin < 0:
        raise ValueError("margin must be non-negative")
    A = as_square(A, "A")
    if A.shape[0] > DENSE_LIMIT:
        return float(np.linalg.norm(A)) + margin
    lam_min = float(np.linalg.eigvalsh(0.5 * (A + A.T))[0])
    return max(0.0, -lam_min) + margin


def stiefel_residual(U) -> float:
    return ortho_residual(frame(U))


def _certified(U) -> StiefelPoint:
    if not isinstance(U, StiefelPoint):
        U = StiefelPoint(U)
    return U.certify()


def invariance_residual(U, A) -> float:
    """``||(I - U U^T) A U||_F``; zero exactly when ``span(U)`` is A-invariant."""
    M = _certified(U).matrix
    W = as_square(A, "A") @ M
    return float(np.linalg.norm(W - M @ (M.T @ W)))


def projector_distance(U, V, norm: Literal["spectral", "fro"] = "spectral") -> float:
    """Norm of ``U U^T - V V^T``."""
    U, V = frame(U), frame(V)
    if U.shape[0] != V.shape[0]:
        raise ShapeMismatch(f"ambient dimensions differ: {U.shape[0]} vs {V.shape[0]}")
    D = U @ U.T - V @ V.T
    if norm == "fro":
        return float(np.linalg.norm(D))
    if norm != "spectral":
        raise ValueError(f"unknown norm {norm!r}")
    return float(svd_small(D)[1][0])


def sample_stiefel_uniform(n: int, r: int, seed: int) -> StiefelPoint:
    """Haar-distributed point of ``St(r, n)`` (QR of a Gaussian matrix, ``diag(R) > 0``)."""
    if not 1 <= r <= n:
        raise ValueError(f"need 1 <= r <= n, got r={r}, n={n}")
    rng = np.random.default_rng(seed)
    return qr_orthonormalize(rng.standard_normal((n, r)))


def _rate(times: np.ndarray, values: np.ndarray) -> float:
    k = max(2, int(math.ceil(0.25 * len(times))))
    t, v = times[-k:], values[-k:]
    mask = v > 0
    if mask.sum() < 2:
        return float("nan")
    return float(np.polyfit(t[mask], np.log(v[mask]), 1)[0])


def integrate_flow(A, U0, cfg: FlowConfig | None = None, reference=None) -> FlowTrace:
    """Fixed-step integration of the shifted Oja flow from ``U0``.

    Stops early once both the Stiefel and the invariance residual are below
    their tolerances (unless ``cfg.stop_on_convergence`` is false).  When a
    ``reference`` frame is given, the spectral projector distance to it is
    recorded at every sample as well.

    Raises
    ------
    RankDeficient
        ``U0`` does not have full column rank.
    Diverged
        ``||U||_F`` exceeded ``1e6`` or became non-finite; the partial trace
        is attached to the exception.
    """
    cfg = cfg or FlowConfig()
    A = as_square(A, "A")
    U = np.array(frame(U0), dtype=float)
    n, r = U.shape
    if A.shape[0] != n:
        raise ShapeMismatch(f"A is {A.shape}, U0 is {U.shape}")
    s = np.linalg.svd(U, compute_uv=False)
    if s[-1] <= RANK_RTOL * s[0]:
        raise RankDeficient("initial frame is rank deficient")
    ref = None if reference is None else frame(reference)

    a, h = cfg.resolve(A)
    B = (A + a * np.eye(n)) / cfg.epsilon
    eye_r = np.eye(r)

    def rhs(X):
        W = B @ X
        return W - X @ (X.T @ W)

    times, s_res, i_res, p_dist = [], [], [], []

    def record(t, X):
        W = A @ X
        times.append(t)
        s_res.append(float(np.linalg.norm(eye_r - X.T @ X)))
        i_res.append(float(np.linalg.norm(W - X @ (X.T @ W))))
        if ref is not None:
            p_dist.append(projector_distance(X, ref))

    def done(converged):
        tt = np.array(times)
        ir = np.array(i_res)
        return FlowTrace(
            times=tt,
            stiefel_residuals=np.array(s_res),
            invariance_residuals=ir,
            final=StiefelPoint(U, ortho_tol=cfg.tol_ortho),
            converged=converged,
            rate_estimate=_rate(tt, ir),
            shift_a=a,
            step_h=h,
            projector_distances=np.array(p_dist) if ref is not None else None,
        )

    def is_converged():
        return s_res[-1] < cfg.tol_ortho and i_res[-1] < cfg.tol_invariance

    record(0.0, U)
    if cfg.stop_on_convergence and is_converged():
        return done(True)

    n_steps = int(math.ceil(cfg.t_max / h - 1e-9))
    rk4 = cfg.integrator == "rk4"
    half = 0.5 * h
    for k in range(1, n_steps + 1):
        U_prev = U
        if rk4:
            k1 = rhs(U)
            k2 = rhs(U + half * k1)
            k3 = rhs(U + half * k2)
            k4 = rhs(U + h * k3)
            U = U + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:
            U = U + h * rhs(U)
        if cfg.retract_every is not None and k % cfg.retract_every == 0:
            U = np.linalg.qr(U)[0]
        norm = math.sqrt(float(np.vdot(U, U)))
        if not math.isfinite(norm) or norm > DIVERGENCE_NORM:
            if not math.isfinite(norm):
                U = U_prev
            partial = done(False)
            raise Diverged(
                f"||U||_F = {norm:.3e} at t = {k * h:.6g}; the unshifted flow can leave "
                "the Stiefel manifold when (A + A^T)/2 is not positive definite",
                trace=partial,
            )
        if k % cfg.sample_every == 0 or k == n_steps:
            record(k * h, U)
            if cfg.stop_on_convergence and is_converged():
                return done(True)
    return done(is_converged())
