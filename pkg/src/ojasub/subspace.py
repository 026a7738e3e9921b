"""Dominant invariant subspaces: extraction, expansion, reduction and SVD.

Every cut index (``r``, ``m``, ``r_tilde``) is validated against the ordered
real Schur form before a flow runs, so a cut through a complex-conjugate
pair is a hard error instead of a silently complexified result.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg as spla

from .errors import (
    BlockAmbiguity,
    ConjugatePairSplit,
    GapTooSmall,
    NoConvergence,
    NotInvariant,
    RankDeficient,
    ShapeMismatch,
    UnvalidatedEigenvalues,
)
from .flow import (
    FlowConfig,
    FlowTrace,
    integrate_flow,
    invariance_residual,
    sample_stiefel_uniform,
)
from .linalg import (
    DENSE_LIMIT,
    StiefelPoint,
    as_matrix,
    as_square,
    eig_ordered,
    frame,
    orthonormal_complement,
    qr_orthonormalize,
    svd_small,
)

GAP_MIN = 1e-6
RETRIES = 3
BASIN_OUTSIDE = 1e-9
BASIN_MARGINAL = 1e-6


@dataclass(frozen=True)
class GapReport:
    r: int
    gap: float
    splits_conjugate_pair: bool


@dataclass(frozen=True)
class SubspaceResult:
    basis: StiefelPoint
    projected: np.ndarray
    eigenvalues: np.ndarray
    invariance_residual: float
    gap: float | None
    trace: FlowTrace | None
    converged: bool

    @property
    def r(self) -> int:
        return self.basis.r

    def to_dict(self) -> dict:
        """JSON-ready mapping (matrices row-major, eigenvalues as [re, im] pairs)."""
        return {
            "n": self.basis.n,
            "r": self.basis.r,
            "basis": self.basis.matrix.tolist(),
            "projected": self.projected.tolist(),
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "invariance_residual": self.invariance_residual,
            "stiefel_residual": self.basis.ortho_residual,
            "gap": self.gap,
            "converged": self.converged,
        }


def _spectrum_checked(A: np.ndarray, k: int):
    spec = eig_ordered(A)
    if spec.splits_conjugate_pair(k):
        raise ConjugatePairSplit(
            f"cut after {k} eigenvalues splits the conjugate pair "
            f"{spec.eigenvalues[k - 1]:.6g}, {spec.eigenvalues[k]:.6g}"
        )
    return spec


def gap_report(A, r: int) -> GapReport:
    spec = eig_ordered(as_square(A, "A"))
    return GapReport(r, spec.gap(r), spec.splits_conjugate_pair(r))


def oracle_dominant_subspace(A, r: int) -> tuple[StiefelPoint, GapReport]:
    """Leading ``r`` ordered-Schur vectors of ``A`` and the gap at ``r``."""
    A = as_square(A, "A")
    if not 1 <= r <= A.shape[0]:
        raise ValueError(f"need 1 <= r <= n, got r={r}")
    spec = _spectrum_checked(A, r)
    return StiefelPoint(spec.leading(r).copy()), GapReport(r, spec.gap(r), False)


def _sorted_eigs(M: np.ndarray) -> np.ndarray:
    ev = np.linalg.eigvals(M) if M.size else np.zeros(0, complex)
    order = np.lexsort((-ev.imag, -ev.real))
    return ev[order]


def _result(A, basis: StiefelPoint, trace, gap, converged=True) -> SubspaceResult:
    M = basis.matrix
    projected = M.T @ A @ M
    return SubspaceResult(
        basis=basis,
        projected=projected,
        eigenvalues=_sorted_eigs(projected),
        invariance_residual=invariance_residual(basis, A),
        gap=gap,
        trace=trace,
        converged=converged,
    )


def _containment(U: np.ndarray, Pm_perp: np.ndarray) -> float:
    return float(np.linalg.norm(Pm_perp.T @ U))


def dominant_subspace(A, r: int, cfg: FlowConfig | None = None, U0=None, within: int | None = None) -> SubspaceResult:
    """Extract the ``r``-dominant invariant subspace of ``A`` with the shifted Oja flow.

    Starts from ``U0`` when given, else from a uniformly random frame drawn
    with ``cfg.seed``; on non-convergence retries up to three times with fresh
    seeds.  At desk scale the ordered Schur oracle validates the cut first.

    ``within=m`` (with ``m > r``) extracts an ``r``-dimensional subspace of
    the ``m``-dominant invariant subspace when there is no gap at ``r``.
    Convergence then means containment in that subspace, and an
    :class:`UnvalidatedEigenvalues` warning is issued because the projected
    eigenvalues need not be eigenvalues of ``A``.

    Raises
    ------
    ConjugatePairSplit
        The cut splits a complex-conjugate pair.
    GapTooSmall
        ``Re(lambda_r) - Re(lambda_{r+1}) < 1e-6``.
    NoConvergence
        All attempts failed to meet both residual tolerances.
    """
    cfg = cfg or FlowConfig()
    A = as_square(A, "A")
    n = A.shape[0]
    if not 1 <= r < n:
        raise ValueError(f"need 1 <= r < n, got r={r}, n={n}")
    cut = r if within is None else within
    if within is not None and not r < within < n:
        raise ValueError(f"need r < within < n, got within={within}")

    gap = None
    Pm_perp = None
    if n <= DENSE_LIMIT:
        spec = _spectrum_checked(A, cut)
        gap = spec.gap(cut)
        if gap < GAP_MIN:
            raise GapTooSmall(f"eigenvalue gap at {cut} is {gap:.3e} < {GAP_MIN:.0e}")
        if within is not None:
            Pm_perp = spec.basis[:, within:]
    elif within is not None:
        raise ValueError("within= needs the dense oracle")

    for attempt in range(RETRIES + 1):
        if attempt == 0 and U0 is not None:
            start = frame(U0)
            if start.shape != (n, r):
                raise ShapeMismatch(f"U0 must be {n}x{r}, got {start.shape}")
        else:
            start = sample_stiefel_uniform(n, r, cfg.seed + attempt)
        if within is None:
            trace = integrate_flow(A, start, cfg)
            if trace.converged:
                return _result(A, qr_orthonormalize(trace.final), trace, gap)
        else:
            trace = integrate_flow(A, start, cfg.with_(stop_on_convergence=False))
            U = trace.final.matrix
            if trace.final.ortho_residual < cfg.tol_ortho and _containment(U, Pm_perp) < cfg.tol_invariance:
                warnings.warn(
                    f"r={r} lies inside a cluster of {within} dominant eigenvalues; "
                    "projected eigenvalues are not validated against A",
                    UnvalidatedEigenvalues,
                    stacklevel=2,
                )
                return _result(A, qr_orthonormalize(U), trace, gap)
    raise NoConvergence(
        f"no convergence after {RETRIES + 1} attempts "
        f"(last residuals: ortho {trace.stiefel_residuals[-1]:.3e}, "
        f"invariance {trace.invariance_residuals[-1]:.3e})"
    )


@dataclass(frozen=True)
class BasinCheck:
    status: str  # "inside" | "marginal" | "outside"
    sigma_min: float


def check_attraction_basin(A, U0, m: int) -> BasinCheck:
    """Classify ``U0`` against the rank condition defining the basin at cut ``m``.

    The coordinates of ``U0`` along the ``m``-dominant invariant subspace,
    taken parallel to the complementary invariant subspace, are obtained
    from the ordered Schur form ``[[T11, T12], [0, T22]]`` by block
    diagonalization (Sylvester equation ``T11 X - X T22 = -T12``).  Their
    smallest singular value decides the status.
    """
    A = as_square(A, "A")
    U = frame(U0)
    n, r = U.shape
    if A.shape[0] != n:
        raise ShapeMismatch(f"A is {A.shape}, U0 is {U.shape}")
    if not r <= m <= n:
        raise ValueError(f"need r <= m <= n, got m={m}")
    spec = _spectrum_checked(A, m)
    C = spec.basis.T @ U
    if m < n:
        T = spec.schur
        X = spla.solve_sylvester(T[:m, :m], -T[m:, m:], -T[:m, m:])
        K = C[:m] - X @ C[m:]
    else:
        K = C
    sigma_min = float(np.linalg.svd(K, compute_uv=False)[r - 1])
    if sigma_min < BASIN_OUTSIDE:
        status = "outside"
    elif sigma_min <= BASIN_MARGINAL:
        status = "marginal"
    else:
        status = "inside"
    return BasinCheck(status, sigma_min)


def _invariant_frame(A, U_r, tol=1e-6) -> np.ndarray:
    U = U_r if isinstance(U_r, StiefelPoint) else StiefelPoint(U_r)
    U.certify()
    res = invariance_residual(U, A)
    if res >= tol:
        raise NotInvariant(f"invariance residual {res:.3e} >= {tol:.0e}")
    return U.matrix


def expand_subspace(A, U_r, ell: int, cfg: FlowConfig | None = None) -> SubspaceResult:
    """Grow an ``r``-dominant basis to ``r + ell`` with a flow on the complement.

    The reduced flow runs on ``Uperp^T A Uperp`` (size ``n - r``); its
    ``ell``-dominant basis ``u`` is lifted to ``[U_r, Uperp u]``.  The
    leading ``r`` columns are exactly the input frame.
    """
    A = as_square(A, "A")
    U = _invariant_frame(A, U_r)
    n, r = U.shape
    if not 1 <= ell < n - r:
        raise ValueError(f"need 1 <= ell < n - r, got ell={ell}")
    gap_r = None
    if n <= DENSE_LIMIT:
        spec = _spectrum_checked(A, r)
        gap_r = spec.gap(r)
        if gap_r < GAP_MIN:
            raise GapTooSmall(f"eigenvalue gap at r={r} is {gap_r:.3e}")
        _spectrum_checked(A, r + ell)
    Uperp = orthonormal_complement(U).matrix
    sub = dominant_subspace(Uperp.T @ A @ Uperp, ell, cfg)
    combined = StiefelPoint(np.hstack([U, Uperp @ sub.basis.matrix]))
    return _result(A, combined, sub.trace, sub.gap)


def _reduction_setup(A, U_r, r_tilde):
    A = as_square(A, "A")
    U = _invariant_frame(A, U_r)
    r = U.shape[1]
    if not 1 <= r_tilde <= r:
        raise ValueError(f"need 1 <= r_tilde <= r, got r_tilde={r_tilde}, r={r}")
    return A, U


def reduce_subspace_schur(A, U_r, r_tilde: int) -> SubspaceResult:
    """Shrink an ``r``-dominant basis to ``r_tilde`` via the ordered Schur form of ``U^T A U``."""
    A, U = _reduction_setup(A, U_r, r_tilde)
    r = U.shape[1]
    if r_tilde == r:
        return _result(A, StiefelPoint(U), None, None)
    spec = _spectrum_checked(U.T @ A @ U, r_tilde)
    basis = qr_orthonormalize(U @ spec.leading(r_tilde))
    return _result(A, basis, None, spec.gap(r_tilde))


def reduce_subspace_recursive(A, U_r, r_tilde: int, cfg: FlowConfig | None = None) -> SubspaceResult:
    """Shrink an ``r``-dominant basis to ``r_tilde`` by an ``r x r`` Oja flow on ``U^T A U``."""
    A, U = _reduction_setup(A, U_r, r_tilde)
    r = U.shape[1]
    if r_tilde == r:
        return _result(A, StiefelPoint(U), None, None)
    sub = dominant_subspace(U.T @ A @ U, r_tilde, cfg)
    basis = qr_orthonormalize(U @ sub.basis.matrix)
    return _result(A, basis, sub.trace, sub.gap)


class SvdExtraction(NamedTuple):
    U: StiefelPoint
    V: StiefelPoint
    sigma: np.ndarray


SVD_CERT_RTOL = 1e-5


def _svd_candidate(A, top, bottom, m, n):
    if top.shape[0] != m or bottom.shape[0] != n:
        return None
    try:
        V = qr_orthonormalize(np.sqrt(2.0) * top).matrix
        U = qr_orthonormalize(np.sqrt(2.0) * bottom).matrix
    except RankDeficient:
        return None
    Pl, s, Qt = np.linalg.svd(U.T @ A @ V)
    U, V = U @ Pl, V @ Qt.T
    res = float(np.linalg.norm(A @ V - U * s))
    return res, SvdExtraction(StiefelPoint(U), StiefelPoint(V), s)


def svd_extract(A, r: int, cfg: FlowConfig | None = None) -> SvdExtraction:
    """Leading ``r`` singular triplets of ``A`` (``n x m``) from the augmented symmetric flow.

    The flow runs on ``[[0_m, A^T], [A, 0_n]]``.  The converged frame is
    split into its first ``m`` rows (right vectors) and last ``n`` rows (left
    vectors); if that assignment fails certification
    ``||A V - U diag(sigma)||_F < 1e-5 ||A||_F`` the swapped assignment is
    tried (possible only for square ``A``).
    """
    A = as_matrix(A, "A")
    n, m = A.shape
    if not 1 <= r <= min(n, m):
        raise ValueError(f"need 1 <= r <= min(n, m), got r={r}")
    s = svd_small(A)[1]
    if r < len(s) and s[r - 1] - s[r] < GAP_MIN:
        raise GapTooSmall(f"singular value gap at r={r} is {s[r - 1] - s[r]:.3e}")
    aug = np.block([[np.zeros((m, m)), A.T], [A, np.zeros((n, n))]])
    X = dominant_subspace(aug, r, cfg).basis.matrix
    tol = SVD_CERT_RTOL * float(np.linalg.norm(A))
    for top, bottom in ((X[:m], X[m:]), (X[n:], X[:n])):
        cand = _svd_candidate(A, top, bottom, m, n)
        if cand is not None and cand[0] < tol:
            return cand[1]
    raise BlockAmbiguity("neither block assignment of the augmented frame passes certification")
