"""Minimum-Frobenius-norm interpolating map and its certificates.

For an instance with X = R Z and Y = A X, the oracle W = X pinv(Y)
= R pinv(A R) is the smallest-norm linear map with W Y = X. It is
rank s, annihilates the orthogonal complement of range(Y), and its
noise sensitivity scales like sigma * sqrt(s).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numkit import (
    Mat,
    as_matrix,
    child_seed,
    default_rank_tol,
    pinv,
    range_projectors,
    spec_stats,
)
from .problem import ProblemInstance, UosInstance, draw_test_signals

CLOSED_FORM_TOL = 1e-8


@dataclass(frozen=True)
class OracleSolution:
    W: Mat
    interpolation_residual: float
    frob_norm: float


def oracle_map(instance: ProblemInstance) -> OracleSolution:
    """Compute W = X pinv(Y) and cross-check against R pinv(A R)."""
    if isinstance(instance, UosInstance):
        raise TypeError("the oracle map is defined for single-subspace instances only")
    Y = instance.Y
    s = instance.Z.shape[0]
    sv = np.linalg.svd(Y, compute_uv=False)
    if np.count_nonzero(sv > default_rank_tol(Y) * sv[0]) < s:
        raise ValueError("Y is rank-deficient; oracle map undefined")
    W = instance.X @ pinv(Y)
    W_alt = instance.R @ pinv(instance.A @ instance.R)
    rel = np.linalg.norm(W - W_alt) / np.linalg.norm(W)
    if rel > CLOSED_FORM_TOL:
        raise ArithmeticError(
            f"closed forms X pinv(Y) and R pinv(A R) disagree (rel. err {rel:.2e})"
        )
    residual = float(np.linalg.norm(W @ Y - instance.X))
    return OracleSolution(W=W, interpolation_residual=residual, frob_norm=float(np.linalg.norm(W)))


def oracle_distance(W, instance: ProblemInstance) -> tuple[float, float, float]:
    """Operator-norm distance to the oracle and its two-term certificate.

    Returns (opnorm_distance, residual_term, offsubspace_term) where
    residual_term = ||W Y - X||_F / sigma_min(X) and offsubspace_term
    = ||W Pperp(range Y)||_op. The distance is controlled by a constant
    multiple of their sum.
    """
    W = as_matrix(W, "W")
    d, n_rows = instance.X.shape[0], instance.Y.shape[0]
    if W.shape != (d, n_rows):
        raise ValueError(f"W has shape {W.shape}, expected {(d, n_rows)}")
    W_o = oracle_map(instance).W
    _, Pperp = range_projectors(instance.Y)
    opnorm_distance = float(np.linalg.svd(W - W_o, compute_uv=False)[0])
    residual_term = float(
        np.linalg.norm(W @ instance.Y - instance.X) / spec_stats(instance.X).sigma_min_nonzero
    )
    offsubspace_term = float(np.linalg.svd(W @ Pperp, compute_uv=False)[0])
    return opnorm_distance, residual_term, offsubspace_term


def oracle_noise_error(instance: ProblemInstance, sigma: float, trials: int, seed: int) -> tuple[float, float]:
    """Mean and 95th-percentile of ||W_oracle(A x + eps) - x|| over fresh
    unit-norm test signals x in range(R) and eps ~ N(0, sigma^2 I_m)."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if trials < 1:
        raise ValueError(f"need trials >= 1, got {trials}")
    W = oracle_map(instance).W
    Xt = draw_test_signals(instance, trials, child_seed(seed, "signals"))
    m = instance.A.shape[0]
    if sigma > 0:
        rng = np.random.default_rng(child_seed(seed, "noise"))
        E = sigma * rng.standard_normal((m, trials))
    else:
        E = np.zeros((m, trials))
    errs = np.linalg.norm(W @ (instance.A @ Xt + E) - Xt, axis=0)
    return float(np.mean(errs)), float(np.percentile(errs, 95))
