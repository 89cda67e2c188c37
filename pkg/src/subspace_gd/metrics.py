"""Error functionals reported during and after training.

Reconstruction error measures training fit; off-subspace error is the
operator norm of the learned map on the orthogonal complement of
range(Y) and measures sensitivity to perturbations the training data
never exercised. test_robustness ties the two together by evaluating
a trained map on noisy measurements of fresh signals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import DeepNet, forward
from .numkit import Mat, as_matrix, child_seed, range_projectors, spec_stats
from .problem import draw_test_signals


@dataclass(frozen=True)
class MetricRecord:
    t: int
    recon_norm: float
    recon_restricted: float
    off_sub: float
    oracle_dist: float

    def __post_init__(self):
        for name in ("recon_norm", "recon_restricted", "off_sub", "oracle_dist"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")


@dataclass(frozen=True)
class RobustnessRow:
    sigma: float
    mean_error: float
    std_error: float
    mean_rel_error: float


def power_opnorm(M, iters: int = 50, tol: float = 1e-10, seed: int = 0, v0=None):
    """Largest singular value of M by power iteration on M^T M.

    Returns (sigma, v) where v is the current right singular vector
    estimate, reusable as v0 to warm-start a nearby problem. Exact to
    tol for matrices with a spectral gap; 50 iterations suffice for
    the well-separated spectra arising here.
    """
    M = as_matrix(M, "M")
    if v0 is not None:
        v = np.asarray(v0, dtype=np.float64)
        v = v / np.linalg.norm(v)
    else:
        v = np.random.default_rng(seed).standard_normal(M.shape[1])
        v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        u = M @ v
        new = float(np.linalg.norm(u))
        if new < 1e-300:
            return 0.0, v
        w = M.T @ (u / new)
        nw = np.linalg.norm(w)
        if nw < 1e-300:
            return new, v
        v = w / nw
        if abs(new - est) <= tol * max(new, 1.0):
            est = new
            break
        est = new
    return est, v


def recon_error(F, X, Y) -> float:
    """Normalized reconstruction error ||F Y - X||_F / ||X||_F."""
    F, X, Y = as_matrix(F, "F"), as_matrix(X, "X"), as_matrix(Y, "Y")
    nx = np.linalg.norm(X)
    if nx == 0:
        raise ValueError("X must be nonzero")
    return float(np.linalg.norm(F @ Y - X) / nx)


def recon_error_restricted(F, A, X_r, normalized: bool = False) -> float:
    """Restricted reconstruction error ||F A X_r - X_r||_F.

    X_r is the rank-r part of the signals; with full-rank signal
    matrices this coincides with the unnormalized reconstruction
    error. Pass normalized=True to divide by ||X_r||_F.
    """
    F, A, X_r = as_matrix(F, "F"), as_matrix(A, "A"), as_matrix(X_r, "X_r")
    err = float(np.linalg.norm(F @ (A @ X_r) - X_r))
    if normalized:
        nx = np.linalg.norm(X_r)
        if nx == 0:
            raise ValueError("X_r must be nonzero for the normalized variant")
        err /= float(nx)
    return err


def off_subspace_error(F, Y, Pperp=None, exact: bool = False) -> float:
    """Operator norm of F restricted to the complement of range(Y).

    Pperp may be precomputed (trainers call this at every record).
    exact=True uses a full SVD instead of power iteration.
    """
    F = as_matrix(F, "F")
    if Pperp is None:
        _, Pperp = range_projectors(Y)
    G = F @ Pperp
    if exact:
        return float(np.linalg.svd(G, compute_uv=False)[0])
    sigma, _ = power_opnorm(G)
    return float(sigma)


def test_robustness(predictor, instance, sigma_grid, trials: int = 100, seed: int = 0) -> list[RobustnessRow]:
    """Test error of a trained map under additive measurement noise.

    predictor is either a d x m matrix applied to measurements or a
    DeepNet evaluated by forward(). For each sigma in the grid, draws
    fresh signals x of norm sqrt(s) (unit energy per active subspace
    dimension, so fit bias and noise floor live on comparable scales)
    and noise eps ~ N(0, sigma^2 I_m), and reports statistics of
    ||predictor(A x + eps) - x|| across trials, both absolute and
    relative to ||x||.
    """
    sigma_grid = list(sigma_grid)
    if not sigma_grid:
        raise ValueError("sigma_grid must be nonempty")
    if any(s < 0 for s in sigma_grid):
        raise ValueError("noise levels must be >= 0")
    if trials < 1:
        raise ValueError(f"need trials >= 1, got {trials}")
    m = instance.A.shape[0]
    signal_norm = math.sqrt(instance.Z.shape[0])
    rows = []
    for j, sigma in enumerate(sigma_grid):
        Xt = draw_test_signals(instance, trials, child_seed(seed, "signals", j),
                               norm=signal_norm)
        Yt = instance.A @ Xt
        if sigma > 0:
            rng = np.random.default_rng(child_seed(seed, "noise", j))
            Yt = Yt + sigma * rng.standard_normal((m, trials))
        if isinstance(predictor, DeepNet):
            Xhat = forward(predictor, Yt)
        else:
            Xhat = as_matrix(predictor, "predictor") @ Yt
        errs = np.linalg.norm(Xhat - Xt, axis=0)
        rels = errs / np.linalg.norm(Xt, axis=0)
        rows.append(
            RobustnessRow(
                sigma=float(sigma),
                mean_error=float(np.mean(errs)),
                std_error=float(np.std(errs)),
                mean_rel_error=float(np.mean(rels)),
            )
        )
    return rows


def lambda_recommendation(instance, d_w: int, C3_guess: float) -> float:
    """Heuristic weight-decay level balancing fit against robustness.

    Evaluates sigma_min(X)^2 sqrt(m) / (d_w^C3 kappa(X) sqrt(d sr(X)))
    with proportionality constant 1. A starting point, not a tuned
    value.
    """
    if C3_guess <= 0:
        raise ValueError(f"C3_guess must be > 0, got {C3_guess}")
    if d_w < 1:
        raise ValueError(f"need d_w >= 1, got {d_w}")
    st = spec_stats(instance.X)
    m = instance.A.shape[0]
    d = instance.X.shape[0]
    return float(
        st.sigma_min_nonzero**2
        * np.sqrt(m)
        / (d_w**C3_guess * st.kappa * np.sqrt(d * st.stable_rank))
    )
