"""Dense float64 matrix primitives shared by every other module.

Thin, contract-checked wrappers around ``numpy.linalg`` plus the seeded
Gaussian sampler and the hash-based child-seed derivation that keeps
independent consumers of a master seed from perturbing each other.
Every function here is pure: identical inputs (seeds included) produce
identical outputs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

# A "matrix" throughout this package is a 2-d, C-contiguous float64 array.
Mat = np.ndarray


def as_matrix(M, name: str = "matrix") -> Mat:
    """Validate ``M`` as a finite 2-d float64 matrix and return it.

    Raises ValueError on wrong rank, empty dimensions, or non-finite
    entries.
    """
    A = np.asarray(M, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {A.shape}")
    if A.shape[0] < 1 or A.shape[1] < 1:
        raise ValueError(f"{name} must have at least one row and one column")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite entries")
    return np.ascontiguousarray(A)


def child_seed(master: int, tag: str, index: int = 0) -> int:
    """Derive a 64-bit child seed from (master seed, purpose tag, index).

    Hash-based so that adding a new consumer of the master seed never
    shifts the random streams of existing consumers.
    """
    payload = f"{int(master)}|{tag}|{int(index)}".encode()
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def gaussian(rows: int, cols: int, std: float, seed: int) -> Mat:
    """i.i.d. normal matrix with mean 0 and the given standard deviation.

    The entries equal ``std`` times a standard-normal stream determined
    entirely by ``seed``, so scaling ``std`` rescales a fixed sample.
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"dimensions must be positive, got {rows}x{cols}")
    if not std > 0:
        raise ValueError(f"std must be positive, got {std}")
    rng = np.random.default_rng(int(seed))
    return float(std) * rng.standard_normal((rows, cols))


@dataclass(frozen=True)
class SvdResult:
    """Economy SVD factors: ``u @ diag(s) @ v.T`` reconstructs the input.

    ``u`` and ``v`` have orthonormal columns; ``s`` is nonincreasing and
    nonnegative.
    """

    u: Mat
    s: np.ndarray
    v: Mat


def econ_svd(M) -> SvdResult:
    """Economy singular value decomposition of a finite matrix."""
    A = as_matrix(M)
    u, s, vt = np.linalg.svd(A, full_matrices=False)
    return SvdResult(u=u, s=s, v=np.ascontiguousarray(vt.T))


def default_rank_tol(M) -> float:
    """Relative rank tolerance: max(rows, cols) * machine epsilon.

    Singular values at or below this fraction of the largest one are
    treated as zero, giving an absolute cutoff of
    sigma_max * max(rows, cols) * eps.
    """
    A = np.asarray(M)
    return max(A.shape) * np.finfo(np.float64).eps


def _rank_cutoff(s: np.ndarray, shape, rank_tol) -> float:
    rtol = max(shape) * np.finfo(np.float64).eps if rank_tol is None else float(rank_tol)
    if rtol < 0:
        raise ValueError(f"rank_tol must be nonnegative, got {rtol}")
    smax = s[0] if s.size else 0.0
    return rtol * smax


def pinv(M, rank_tol: float | None = None) -> Mat:
    """Moore-Penrose pseudoinverse via SVD.

    Singular values at or below ``rank_tol * sigma_max`` are inverted to
    zero. An all-zero matrix maps to the all-zero pseudoinverse.
    """
    A = as_matrix(M)
    u, s, vt = np.linalg.svd(A, full_matrices=False)
    cutoff = _rank_cutoff(s, A.shape, rank_tol)
    inv = np.where(s > cutoff, np.divide(1.0, s, out=np.zeros_like(s), where=s > 0), 0.0)
    return (vt.T * inv) @ u.T


def range_projectors(M, rank_tol: float | None = None) -> tuple[Mat, Mat]:
    """Orthogonal projectors (P, Pperp) onto range(M) and its complement.

    P is built from the left singular vectors whose singular values
    exceed the rank cutoff; Pperp = I - P. Both are symmetric and
    idempotent at working precision.
    """
    A = as_matrix(M)
    u, s, _ = np.linalg.svd(A, full_matrices=False)
    cutoff = _rank_cutoff(s, A.shape, rank_tol)
    r = int(np.count_nonzero(s > cutoff))
    ur = u[:, :r]
    P = ur @ ur.T
    Pperp = np.eye(A.shape[0]) - P
    return P, Pperp


@dataclass(frozen=True)
class SpecStats:
    op_norm: float
    sigma_min_nonzero: float
    kappa: float
    stable_rank: float
    frob_norm: float


def spec_stats(M, rank_tol: float | None = None) -> SpecStats:
    """Spectral summary: operator norm, smallest nonzero singular value,
    condition number over the nonzero spectrum, stable rank, and
    Frobenius norm. Rejects the zero matrix."""
    A = as_matrix(M)
    s = np.linalg.svd(A, compute_uv=False)
    cutoff = _rank_cutoff(s, A.shape, rank_tol)
    nonzero = s[s > cutoff]
    if nonzero.size == 0:
        raise ValueError("spec_stats of an (effectively) zero matrix")
    op = float(s[0])
    smin = float(nonzero[-1])
    frob = float(np.linalg.norm(A))
    return SpecStats(
        op_norm=op,
        sigma_min_nonzero=smin,
        kappa=op / smin,
        stable_rank=frob**2 / op**2,
        frob_norm=frob,
    )
