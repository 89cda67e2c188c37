"""Synthetic underdetermined inverse-problem instances.

Generates measurement operators, orthonormal subspace bases, and
conditioned coefficient matrices; assembles them into immutable problem
instances (single subspace or union of subspaces); checks the
restricted isometry of the measurement operator on the signal subspace;
and provides the low-rank/small split and the exact sample-reduction
that replaces n training samples by s equivalent ones.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .numkit import (
    Mat,
    as_matrix,
    child_seed,
    default_rank_tol,
    econ_svd,
    gaussian,
    range_projectors,
)

ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class ProblemInstance:
    """One dataset: X = R Z lies in an s-dimensional subspace, Y = A X.

    A: m x d measurement operator, R: d x s orthonormal basis,
    Z: s x n coefficients of rank s, X: d x n signals, Y: m x n
    measurements. kappa_target and seed record how the data was made.
    """

    A: Mat
    R: Mat
    Z: Mat
    X: Mat
    Y: Mat
    kappa_target: float
    seed: int

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """(m, d, s, n)"""
        m, d = self.A.shape
        s, n = self.Z.shape
        return m, d, s, n


@dataclass(frozen=True)
class UosInstance:
    """Union-of-subspaces dataset: column i of X lies in range(bases[a_i])."""

    A: Mat
    bases: tuple[Mat, ...]
    assignments: np.ndarray
    Z: Mat
    X: Mat
    Y: Mat
    kappa_target: float
    seed: int

    @property
    def dims(self) -> tuple[int, int, int, int]:
        m, d = self.A.shape
        s, n = self.Z.shape
        return m, d, s, n


@dataclass(frozen=True)
class RipReport:
    sigma_min_AR: float
    sigma_max_AR: float
    delta_effective: float
    passes: bool
    delta: float


def gen_measurement(m: int, d: int, seed: int) -> Mat:
    """Measurement operator A = G / sqrt(m), G standard Gaussian m x d."""
    if not 1 <= m <= d:
        raise ValueError(f"need 1 <= m <= d, got m={m}, d={d}")
    return gaussian(m, d, 1.0, seed) / np.sqrt(m)


def gen_basis(d: int, s: int, seed: int) -> Mat:
    """Orthonormal d x s basis: Q factor of the reduced QR of a Gaussian."""
    if not 1 <= s <= d:
        raise ValueError(f"need 1 <= s <= d, got s={s}, d={d}")
    G = gaussian(d, s, 1.0, seed)
    Q, _ = np.linalg.qr(G)
    return np.ascontiguousarray(Q)


def gen_coefficients(s: int, n: int, kappa: float, seed: int) -> Mat:
    """Coefficient matrix Z (s x n) with condition number exactly kappa.

    Built from its SVD: random orthonormal factors and singular values
    placed on a deterministic uniform grid over [1/kappa, 1], largest
    first. kappa > 1 needs s >= 2 since a single singular value cannot
    realize it.
    """
    if kappa < 1:
        raise ValueError(f"kappa must be >= 1, got {kappa}")
    if n < s:
        raise ValueError(f"need n >= s, got s={s}, n={n}")
    if s == 1 and kappa != 1:
        raise ValueError("kappa > 1 requires s >= 2")
    sv = np.linspace(1.0, 1.0 / kappa, s)
    Gu = gaussian(s, s, 1.0, child_seed(seed, "coeff-left"))
    Gv = gaussian(n, s, 1.0, child_seed(seed, "coeff-right"))
    U, _ = np.linalg.qr(Gu)
    V, _ = np.linalg.qr(Gv)
    return (U * sv) @ V.T


def assemble(A, R, Z, kappa_target: float = float("nan"), seed: int = 0) -> ProblemInstance:
    """Form X = R Z and Y = A X and validate the instance invariants."""
    A = as_matrix(A, "A")
    R = as_matrix(R, "R")
    Z = as_matrix(Z, "Z")
    m, d = A.shape
    dr, s = R.shape
    sz, n = Z.shape
    if dr != d:
        raise ValueError(f"A is {m}x{d} but R has {dr} rows")
    if sz != s:
        raise ValueError(f"R has {s} columns but Z has {sz} rows")
    if m > d:
        raise ValueError(f"need m <= d, got m={m}, d={d}")
    if s > min(m, n):
        raise ValueError(f"need s <= min(m, n), got s={s}, m={m}, n={n}")
    gram_err = np.max(np.abs(R.T @ R - np.eye(s)))
    if gram_err > ORTHO_TOL:
        raise ValueError(f"R columns not orthonormal (deviation {gram_err:.2e})")
    sv = np.linalg.svd(Z, compute_uv=False)
    if sv[-1] <= default_rank_tol(Z) * sv[0]:
        raise ValueError("Z must have full row rank s")
    X = R @ Z
    Y = A @ X
    return ProblemInstance(A=A, R=R, Z=Z, X=X, Y=Y, kappa_target=float(kappa_target), seed=int(seed))


def gen_instance(m: int, d: int, s: int, n: int, kappa: float, seed: int) -> ProblemInstance:
    """One-call generator wiring the three samplers off a master seed."""
    A = gen_measurement(m, d, child_seed(seed, "measurement"))
    R = gen_basis(d, s, child_seed(seed, "basis"))
    Z = gen_coefficients(s, n, kappa, child_seed(seed, "coefficients"))
    return assemble(A, R, Z, kappa_target=kappa, seed=seed)


def rip_check(A, R, delta: float) -> RipReport:
    """Restricted isometry of A on range(R) via the spectrum of A R.

    delta_effective = max(1 - sigma_min^2, sigma_max^2 - 1); the check
    passes iff all singular values of A R lie in
    [sqrt(1 - delta), sqrt(1 + delta)].
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    s = np.linalg.svd(as_matrix(A) @ as_matrix(R), compute_uv=False)
    smin, smax = float(s[-1]), float(s[0])
    delta_eff = max(1.0 - smin**2, smax**2 - 1.0)
    return RipReport(
        sigma_min_AR=smin,
        sigma_max_AR=smax,
        delta_effective=delta_eff,
        passes=bool(delta_eff <= delta),
        delta=float(delta),
    )


def rip_check_uos(instance: UosInstance, delta: float) -> RipReport:
    """Per-basis restricted isometry for a union instance, worst case wins."""
    reports = [rip_check(instance.A, R, delta) for R in instance.bases]
    return max(reports, key=lambda r: r.delta_effective)


def split_lowrank(X, r: int) -> tuple[Mat, Mat]:
    """Split X into its best rank-r approximation and the remainder.

    X_r is the top-r singular truncation; X_small = X - X_r, so the sum
    is exact and sigma_max(X_small) equals the (r+1)-th singular value.
    """
    A = as_matrix(X)
    f = econ_svd(A)
    cutoff = default_rank_tol(A) * (f.s[0] if f.s.size else 0.0)
    rank = int(np.count_nonzero(f.s > cutoff))
    if not 1 <= r <= rank:
        raise ValueError(f"need 1 <= r <= rank(X) = {rank}, got r={r}")
    X_r = (f.u[:, :r] * f.s[:r]) @ f.v[:, :r].T
    return X_r, A - X_r


def gen_uos(m: int, d: int, s: int, k: int, n: int, kappa: float, seed: int) -> UosInstance:
    """Union-of-subspaces dataset: k independent bases, one coefficient
    matrix, and a uniformly random basis assignment per sample."""
    if k < 1:
        raise ValueError(f"need k >= 1, got {k}")
    A = gen_measurement(m, d, child_seed(seed, "measurement"))
    bases = tuple(gen_basis(d, s, child_seed(seed, "uos-basis", j)) for j in range(k))
    Z = gen_coefficients(s, n, kappa, child_seed(seed, "coefficients"))
    rng = np.random.default_rng(child_seed(seed, "assignments"))
    assignments = rng.integers(0, k, size=n)
    X = np.empty((d, n))
    for j in range(k):
        cols = assignments == j
        X[:, cols] = bases[j] @ Z[:, cols]
    Y = A @ X
    return UosInstance(
        A=A,
        bases=bases,
        assignments=assignments,
        Z=Z,
        X=X,
        Y=Y,
        kappa_target=float(kappa),
        seed=int(seed),
    )


def reduce_samples(instance: ProblemInstance) -> ProblemInstance:
    """Replace the n training samples by s samples with identical
    gradient-descent dynamics.

    With Z = U_Z S_Z V_Z^T, the reduced coefficients are U_Z S_Z, so
    X~ X~^T = X X^T and Y~ Y~^T = Y Y^T: every quantity the training
    loop touches (loss values, gradients) is unchanged.
    """
    f = econ_svd(instance.Z)
    s = instance.Z.shape[0]
    if f.s[-1] <= default_rank_tol(instance.Z) * f.s[0]:
        raise ValueError("Z is rank-deficient; sample reduction undefined")
    Z_red = f.u * f.s
    X_red = instance.R @ Z_red
    Y_red = instance.A @ X_red
    return ProblemInstance(
        A=instance.A,
        R=instance.R,
        Z=Z_red,
        X=X_red,
        Y=Y_red,
        kappa_target=instance.kappa_target,
        seed=instance.seed,
    )


def draw_test_signals(instance, trials: int, seed: int,
                      norm: float = 1.0) -> Mat:
    """Fresh test signals from the instance's signal model.

    Coefficients are condition-1 draws with every column rescaled to the
    requested norm (unit by default; robustness evaluation passes sqrt(s)
    for unit energy per active dimension).  Single-subspace instances draw
    coefficients in range(R); union instances additionally draw a uniformly
    random basis per trial.  Used by the oracle and robustness evaluations.
    """
    if trials < 1:
        raise ValueError(f"need trials >= 1, got {trials}")
    if not norm > 0:
        raise ValueError(f"need norm > 0, got {norm}")
    s = instance.Z.shape[0]
    if trials >= s:
        Zt = gen_coefficients(s, trials, 1.0, child_seed(seed, "test-coefficients"))
    else:
        # the conditioned generator needs n >= s; fall back to plain Gaussians
        Zt = gaussian(s, trials, 1.0, child_seed(seed, "test-coefficients"))
    Zt = norm * Zt / np.linalg.norm(Zt, axis=0, keepdims=True)
    if isinstance(instance, UosInstance):
        rng = np.random.default_rng(child_seed(seed, "test-assignments"))
        picks = rng.integers(0, len(instance.bases), size=trials)
        Xt = np.empty((instance.X.shape[0], trials))
        for j in range(len(instance.bases)):
            cols = picks == j
            Xt[:, cols] = instance.bases[j] @ Zt[:, cols]
        return Xt
    return instance.R @ Zt


# ---------------------------------------------------------------------------
# Flat matrix container: one header line "rows cols", then one line per row
# of decimal floats at 17 significant digits (exact float64 round-trip).
# ---------------------------------------------------------------------------


def write_matrix_block(fh, M) -> None:
    """Write one container block ('rows cols' header, then the rows)."""
    A = as_matrix(M)
    fh.write(f"{A.shape[0]} {A.shape[1]}\n")
    for row in A:
        fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def read_matrix_block(fh) -> Mat:
    """Read one container block written by write_matrix_block."""
    header = fh.readline().split()
    if len(header) != 2:
        raise ValueError("matrix block header must be 'rows cols'")
    rows, cols = int(header[0]), int(header[1])
    data = np.empty((rows, cols))
    for i in range(rows):
        values = fh.readline().split()
        if len(values) != cols:
            raise ValueError(f"matrix block row {i} has {len(values)} values, expected {cols}")
        data[i] = [float(v) for v in values]
    return data


def save_matrix(path: str, M) -> None:
    """Write a matrix to the flat text container."""
    with open(path, "w") as fh:
        write_matrix_block(fh, M)


def load_matrix(path: str) -> Mat:
    """Read a matrix from the flat text container."""
    with open(path) as fh:
        return read_matrix_block(fh)


def save_instance(instance, directory: str) -> None:
    """Serialize an instance (either kind) into a directory of containers."""
    os.makedirs(directory, exist_ok=True)
    for name in ("A", "Z", "X", "Y"):
        save_matrix(os.path.join(directory, f"{name}.txt"), getattr(instance, name))
    with open(os.path.join(directory, "meta.txt"), "w") as fh:
        fh.write(f"kappa_target {instance.kappa_target:.17g}\n")
        fh.write(f"seed {instance.seed}\n")
        if isinstance(instance, UosInstance):
            fh.write(f"uos_k {len(instance.bases)}\n")
    if isinstance(instance, UosInstance):
        for j, R in enumerate(instance.bases):
            save_matrix(os.path.join(directory, f"basis_{j}.txt"), R)
        np.savetxt(os.path.join(directory, "assignments.txt"), instance.assignments, fmt="%d")
    else:
        save_matrix(os.path.join(directory, "R.txt"), instance.R)


def load_instance(directory: str):
    """Inverse of save_instance."""
    meta: dict[str, float] = {}
    with open(os.path.join(directory, "meta.txt")) as fh:
        for line in fh:
            key, value = line.split()
            meta[key] = float(value)
    parts = {name: load_matrix(os.path.join(directory, f"{name}.txt")) for name in ("A", "Z", "X", "Y")}
    kappa = meta.get("kappa_target", float("nan"))
    seed = int(meta.get("seed", 0))
    if "uos_k" in meta:
        k = int(meta["uos_k"])
        bases = tuple(load_matrix(os.path.join(directory, f"basis_{j}.txt")) for j in range(k))
        assignments = np.loadtxt(os.path.join(directory, "assignments.txt"), dtype=np.int64, ndmin=1)
        return UosInstance(
            A=parts["A"], bases=bases, assignments=assignments, Z=parts["Z"],
            X=parts["X"], Y=parts["Y"], kappa_target=kappa, seed=seed,
        )
    R = load_matrix(os.path.join(directory, "R.txt"))
    return ProblemInstance(
        A=parts["A"], R=R, Z=parts["Z"], X=parts["X"], Y=parts["Y"],
        kappa_target=kappa, seed=seed,
    )
