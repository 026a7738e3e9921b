"""Dense linear-algebra kernel.

Thin, contract-checked wrappers over numpy/scipy factorizations plus the
ordered real Schur decomposition used as the reference ("oracle") for every
eigenvalue and invariant-subspace comparison in the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as spla
from scipy.linalg import lapack

from .errors import (
    NoConvergence,
    NonFinite,
    NotOrthonormal,
    Overflow,
    RankDeficient,
    ShapeMismatch,
    TooLarge,
)

DENSE_LIMIT = 2000
ORTHO_TOL = 1e-8
RANK_RTOL = 1e-12


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Return ``x`` as a finite 2-D float64 array (1-D input becomes a column)."""
    arr = np.array(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"{name} contains NaN or Inf")
    return arr


def as_square(x, name: str = "matrix") -> np.ndarray:
    arr = as_matrix(x, name)
    if arr.shape[0] != arr.shape[1]:
        raise ShapeMismatch(f"{name} must be square, got shape {arr.shape}")
    return arr


def _check_dense(n: int) -> None:
    if n > DENSE_LIMIT:
        raise TooLarge(f"n={n} exceeds the dense limit {DENSE_LIMIT}")


def ortho_residual(M: np.ndarray) -> float:
    """Frobenius norm of ``I - M^T M``."""
    M = np.asarray(M, dtype=float)
    return float(np.linalg.norm(np.eye(M.shape[1]) - M.T @ M))


@dataclass(frozen=True)
class StiefelPoint:
    """An ``n x r`` frame together with its orthonormality residual.

    The frame is stored read-only. ``ortho_residual`` is always recomputed
    from the matrix, so the stored value cannot drift from the data.
    Points whose residual exceeds ``ortho_tol`` are still representable
    (integrators hand back off-manifold iterates), but are not
    :attr:`certified`.
    """

    matrix: np.ndarray
    ortho_tol: float = ORTHO_TOL
    ortho_residual: float = field(init=False)

    def __post_init__(self):
        M = as_matrix(self.matrix, "StiefelPoint matrix")
        if M.shape[1] > M.shape[0]:
            raise ShapeMismatch(f"frame has more columns than rows: {M.shape}")
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)
        object.__setattr__(self, "ortho_residual", ortho_residual(M))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def r(self) -> int:
        return self.matrix.shape[1]

    @property
    def certified(self) -> bool:
        return self.ortho_residual < self.ortho_tol

    def certify(self, tol: float | None = None) -> "StiefelPoint":
        tol = self.ortho_tol if tol is None else tol
        if not self.ortho_residual < tol:
            raise NotOrthonormal(
                f"orthonormality residual {self.ortho_residual:.3e} exceeds {tol:.1e}"
            )
        return self

    def projector(self) -> np.ndarray:
        return self.matrix @ self.matrix.T


def frame(U) -> np.ndarray:
    """Accept either a :class:`StiefelPoint` or a raw array; return the array."""
    if isinstance(U, StiefelPoint):
        return U.matrix
    return as_matrix(U, "frame")


def qr_orthonormalize(M) -> StiefelPoint:
    """Orthonormal basis of ``span(M)`` with the sign convention ``diag(R) >= 0``.

    Raises
    ------
    RankDeficient
        If the smallest singular value of ``M`` is below ``1e-12`` times the
        largest one.
    """
    M = frame(M)
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[-1] <= RANK_RTOL * s[0]:
        raise RankDeficient(
            f"matrix of shape {M.shape} is rank deficient "
            f"(sigma_min={s[-1] if s.size else 0.0:.3e})"
        )
    Q, R = np.linalg.qr(M)
    signs = np.where(np.diag(R) < 0, -1.0, 1.0)
    return StiefelPoint(Q * signs)


def orthonormal_complement(U) -> StiefelPoint:
    """Orthonormal basis of the orthogonal complement of ``span(U)``."""
    M = frame(U)
    n, r = M.shape
    if ortho_residual(M) >= ORTHO_TOL:
        raise NotOrthonormal("orthonormal_complement needs an orthonormal frame")
    Q, _ = np.linalg.qr(M, mode="complete")
    return StiefelPoint(Q[:, r:])


def matrix_exponential(M, t: float = 1.0) -> np.ndarray:
    """``exp(M t)`` by scaling and squaring with a Pade core (scipy's expm)."""
    M = as_square(M)
    _check_dense(M.shape[0])
    with np.errstate(over="raise", invalid="raise"):
        try:
            E = spla.expm(M * t)
        except FloatingPointError as exc:
            raise Overflow(f"exp(M t) overflows: {exc}") from exc
    if not np.all(np.isfinite(E)):
        raise Overflow("exp(M t) is not representable in float64")
    return E


@dataclass(frozen=True)
class OrderedSpectrum:
    """Eigenvalues sorted by descending real part, with an ordered real Schur basis.

    ``basis.T @ A @ basis == schur`` is quasi-upper-triangular, and the
    leading ``k`` columns of ``basis`` span the ``k``-dominant invariant
    subspace for any ``k`` that does not cut through a 2x2 block.
    """

    eigenvalues: np.ndarray
    blocks: tuple[int, ...]
    basis: np.ndarray
    schur: np.ndarray

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    def block_boundaries(self) -> set[int]:
        return set(np.cumsum((0,) + self.blocks).tolist())

    def splits_conjugate_pair(self, k: int) -> bool:
        """True when a cut after the first ``k`` eigenvalues splits a 2x2 block."""
        return k not in self.block_boundaries()

    def gap(self, k: int) -> float:
        """``Re(lambda_k) - Re(lambda_{k+1})`` with 1-based ``k``; ``inf`` for k = n."""
        if k >= self.n:
            return float("inf")
        return float(self.eigenvalues[k - 1].real - self.eigenvalues[k].real)

    def leading(self, k: int) -> np.ndarray:
        return self.basis[:, :k]


def _schur_blocks(T: np.ndarray) -> list[tuple[int, int, np.ndarray]]:
    n = T.shape[0]
    out = []
    i = 0
    while i < n:
        if i + 1 < n and T[i + 1, i] != 0.0:
            ev = np.linalg.eigvals(T[i : i + 2, i : i + 2])
            ev = ev[np.argsort(-ev.imag, kind="stable")]
            out.append((i, 2, ev))
            i += 2
        else:
            out.append((i, 1, np.array([T[i, i] + 0j])))
            i += 1
    return out


def _block_key(ev: np.ndarray) -> tuple[float, float]:
    return (-float(ev[0].real), -float(ev[0].imag))


def eig_ordered(M) -> OrderedSpectrum:
    """Ordered real Schur decomposition: eigenvalues by descending real part.

    Ties in the real part are broken by descending imaginary part and then
    by position in the unordered Schur form. Blocks are moved into place by
    LAPACK ``dtrexc`` swaps (selection sort over diagonal blocks).
    """
    A = as_square(M)
    n = A.shape[0]
    _check_dense(n)
    if n == 0:
        return OrderedSpectrum(np.zeros(0, complex), (), np.zeros((0, 0)), np.zeros((0, 0)))
    try:
        T, Z = spla.schur(A, output="real")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NoConvergence(f"real Schur decomposition failed: {exc}") from exc
    T = np.asfortranarray(T)
    Z = np.asfortranarray(Z)

    pos = 0
    while True:
        blocks = _schur_blocks(T)
        if pos >= len(blocks):
            break
        keys = [_block_key(b[2]) for b in blocks[pos:]]
        best = pos + min(range(len(keys)), key=lambda j: keys[j])
        if best != pos and keys[best - pos] < keys[0]:
            T, Z, info = lapack.dtrexc(T, Z, blocks[best][0] + 1, blocks[pos][0] + 1)
            if info != 0:
                raise NoConvergence(f"dtrexc block swap failed (info={info})")
        pos += 1

    blocks = _schur_blocks(T)
    eigenvalues = np.concatenate([b[2] for b in blocks])
    sizes = tuple(b[1] for b in blocks)
    T = np.triu(T, -1)
    for start, size, _ in blocks:
        if size == 1 and start + 1 < n:
            T[start + 1, start] = 0.0
    return OrderedSpectrum(eigenvalues, sizes, np.ascontiguousarray(Z), np.ascontiguousarray(T))


def spectral_abscissa(M) -> float:
    """Largest real part over the spectrum of ``M``."""
    A = as_square(M)
    _check_dense(A.shape[0])
    if A.size == 0:
        return float("-inf")
    try:
        ev = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from exc
    return float(np.max(ev.real))


def svd_small(M) -> tuple[StiefelPoint, np.ndarray, StiefelPoint]:
    """Thin SVD ``M = U diag(s) V^T`` with ``s`` descending."""
    A = as_matrix(M)
    _check_dense(max(A.shape))
    try:
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from exc
    return StiefelPoint(U), s, StiefelPoint(Vt.T)
