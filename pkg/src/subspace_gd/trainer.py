"""Full-batch gradient descent with weight decay.

Closed-form losses and gradients for both parameterizations, the
training loop with per-stride metric records, hyperparameters derived
from the data spectrum (step size, weight decay, horizon, and the
first-phase length bound), and a finite-difference gradient oracle.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .metrics import power_opnorm
from .model import DeepNet, NetDims, end_to_end
from .numkit import Mat, as_matrix, range_projectors, spec_stats
from .oracle import oracle_map
from .problem import ProblemInstance, UosInstance

DIVERGENCE_THRESHOLD = 1e12


@dataclass(frozen=True)
class HyperParams:
    """Training knobs; unset fields are filled in by resolve_hyperparams.

    eta or prefactor: explicit step size, or the multiple k of the
    derived step m/(L sigma_max^2(X)). lam or gamma: explicit weight
    decay, or the accuracy level it is derived from. C1 scales the
    stopping-time detection threshold; log_stride sets record cadence.
    """

    T: int
    eta: float | None = None
    lam: float | None = None
    gamma: float | None = None
    prefactor: float | None = None
    C1: float = 1.0
    log_stride: int = 100

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"need T >= 1, got {self.T}")
        if self.C1 <= 0:
            raise ValueError(f"need C1 > 0, got {self.C1}")
        if self.log_stride < 1:
            raise ValueError(f"need log_stride >= 1, got {self.log_stride}")
        if self.eta is not None and self.eta < 0:
            raise ValueError(f"need eta >= 0, got {self.eta}")
        if self.lam is not None and self.lam < 0:
            raise ValueError(f"need lam >= 0, got {self.lam}")
        if self.gamma is not None and not 0 <= self.gamma <= 1:
            raise ValueError(f"need gamma in [0, 1], got {self.gamma}")


@dataclass(frozen=True)
class TheoryReport:
    """Derived hyperparameters and phase bounds for one instance."""

    eta_star: float
    lambda_star: float
    T_star: int
    tau_ub: float
    gamma_cap: float
    width_required_note: str


@dataclass
class TrainTrace:
    """Everything a training run reports.

    records holds one dict per recorded iteration with keys t, loss,
    recon_norm, recon_restricted, off_sub, oracle_dist, weight_norms
    plus any hook-added entries. status is "ok" or "diverged".
    """

    records: list[dict]
    tau_detected: int | None
    wall_time: float
    status: str
    diverged_at: int | None
    hp: HyperParams


def resolve_hyperparams(hp: HyperParams, instance, L: int) -> HyperParams:
    """Fill eta from the prefactor and tie lam and gamma together.

    eta defaults to prefactor * m / (L sigma_max^2(X)) with prefactor 1;
    lam and gamma determine each other through
    lam = gamma * sigma_min^2(X) * sqrt(m/d).
    """
    st = spec_stats(instance.X)
    m = instance.A.shape[0]
    d = instance.X.shape[0]
    eta = hp.eta
    if eta is None:
        k = 1.0 if hp.prefactor is None else hp.prefactor
        if k < 0:
            raise ValueError(f"need prefactor >= 0, got {k}")
        eta = k * m / (L * st.op_norm**2)
    lam, gamma = hp.lam, hp.gamma
    if lam is None:
        if gamma is None:
            raise ValueError("specify lam or gamma")
        lam = gamma * st.sigma_min_nonzero**2 * math.sqrt(m / d)
    if gamma is None:
        gamma = lam * math.sqrt(d / m) / st.sigma_min_nonzero**2
    return replace(hp, eta=float(eta), lam=float(lam), gamma=float(gamma))


def derive_hyperparams(instance, L: int, d_w: int, gamma: float) -> TheoryReport:
    """Step size, weight decay, horizon, and first-phase bound for an
    accuracy level gamma in (0, 1]."""
    if not 0 < gamma <= 1:
        raise ValueError(f"need gamma in (0, 1], got {gamma}")
    if L < 2 or d_w < 1:
        raise ValueError(f"need L >= 2 and d_w >= 1, got L={L}, d_w={d_w}")
    st = spec_stats(instance.X)
    m = instance.A.shape[0]
    d = instance.X.shape[0]
    eta_star = m / (L * st.op_norm**2)
    lambda_star = gamma * st.sigma_min_nonzero**2 * math.sqrt(m / d)
    T_star = math.ceil(2 * L * st.kappa**2 * math.log(d_w) / gamma * math.sqrt(d / m))
    smin_sq = st.sigma_min_nonzero**2
    if lambda_star > 0:
        tau_ub = (64 * m / (eta_star * L * smin_sq)) * math.log(L * smin_sq / lambda_star)
    else:
        tau_ub = float("inf")
    gamma_cap = min(1.0, 1e-7 * math.sqrt(d) / (L * math.sqrt(m)))
    note = (
        f"width heuristics: d*stable_rank(X) = {d * st.stable_rank:.1f} vs d_w = {d_w}; "
        f"product bounds need d_w >= m(L-1) = {m * (L - 1)} and d_w >= L^2 m = {L * L * m}; "
        f"guarantee-level scaling d_w >= d sr(X) poly(L, kappa) has unspecified constants"
    )
    return TheoryReport(
        eta_star=float(eta_star),
        lambda_star=float(lambda_star),
        T_star=int(T_star),
        tau_ub=float(tau_ub),
        gamma_cap=float(gamma_cap),
        width_required_note=note,
    )


def shrink_product(dims: NetDims, eta: float, lam: float) -> float:
    """C_prod = prod_i (1 - eta lam / d_i) over all layers."""
    out = 1.0
    for ell in range(1, dims.L + 1):
        out *= 1.0 - eta * lam / dims.fan_in(ell)
    return out


def shrink_product_excluding(dims: NetDims, eta: float, lam: float, skip: int) -> float:
    """C_prod with layer `skip` left out of the product."""
    if not 1 <= skip <= dims.L:
        raise ValueError(f"layer index {skip} outside 1..{dims.L}")
    out = 1.0
    for ell in range(1, dims.L + 1):
        if ell != skip:
            out *= 1.0 - eta * lam / dims.fan_in(ell)
    return out


def _forward_chain(net: DeepNet, Y):
    """G[0] = Y, G[i] = W_i G[i-1] for i < L, with the penultimate
    activation applied in place for ReLU nets. Returns (G, mask)."""
    G = [Y]
    for W in net.weights[:-1]:
        G.append(W @ G[-1])
    mask = None
    if net.relu_at_penultimate:
        mask = G[-1] > 0
        G[-1] = np.maximum(G[-1], 0.0)
    return G, mask


def _reg_coeff(net: DeepNet, ell: int, lam: float) -> float:
    if net.mode == "normalized":
        return lam / net.dims.fan_in(ell)
    return lam


def _reg_term(net: DeepNet, lam: float) -> float:
    if lam == 0:
        return 0.0
    total = 0.0
    for ell, W in enumerate(net.weights, start=1):
        total += _reg_coeff(net, ell, lam) * float(np.vdot(W, W))
    return 0.5 * total


def _check_data_shapes(net: DeepNet, X, Y) -> None:
    if Y.shape[0] != net.dims.m:
        raise ValueError(f"Y has {Y.shape[0]} rows, net expects {net.dims.m}")
    if X.shape != (net.dims.d, Y.shape[1]):
        raise ValueError(f"X has shape {X.shape}, expected {(net.dims.d, Y.shape[1])}")


def loss(net: DeepNet, X, Y, lam: float) -> float:
    """Half squared residual of the mode-scaled map plus the mode's
    weight-decay term."""
    X, Y = as_matrix(X, "X"), as_matrix(Y, "Y")
    _check_data_shapes(net, X, Y)
    G, _ = _forward_chain(net, Y)
    Phi = net.scale * (net.weights[-1] @ G[-1]) - X
    return 0.5 * float(np.vdot(Phi, Phi)) + _reg_term(net, lam)


def gradients(net: DeepNet, X, Y, lam: float) -> list[Mat]:
    """Analytic layer gradients; ReLU nets take the masked backward pass."""
    if net.relu_at_penultimate:
        return relu_gradients(net, X, Y, lam)
    return _gradients_impl(net, X, Y, lam)


def relu_gradients(net: DeepNet, X, Y, lam: float) -> list[Mat]:
    """Gradients of the ReLU variant, with subgradient 0 at the kink."""
    if not net.relu_at_penultimate:
        raise ValueError("relu_gradients requires a net with the ReLU flag set")
    return _gradients_impl(net, X, Y, lam)


def _gradients_impl(net: DeepNet, X, Y, lam: float) -> list[Mat]:
    X, Y = as_matrix(X, "X"), as_matrix(Y, "Y")
    _check_data_shapes(net, X, Y)
    G, mask = _forward_chain(net, Y)
    L = net.dims.L
    scale = net.scale
    Phi = scale * (net.weights[-1] @ G[-1]) - X
    H = scale * Phi
    grads: list = [None] * L
    g = H @ G[L - 1].T
    if lam:
        g += _reg_coeff(net, L, lam) * net.weights[-1]
    grads[L - 1] = g
    H = net.weights[-1].T @ H
    if mask is not None:
        H = H * mask
    for i in range(L - 1, 0, -1):
        g = H @ G[i - 1].T
        if lam:
            g += _reg_coeff(net, i, lam) * net.weights[i - 1]
        grads[i - 1] = g
        if i > 1:
            H = net.weights[i - 1].T @ H
    return grads


def grad_check(net: DeepNet, data, lam: float, epsilon: float = 1e-5) -> float:
    """Worst deviation between analytic gradients and central differences.

    data is an instance or an (X, Y) pair. The deviation is relative
    with a unit floor on the denominator, so near-zero entries compare
    absolutely. Intended for small nets; cost is two loss evaluations
    per parameter.
    """
    if hasattr(data, "X"):
        X, Y = data.X, data.Y
    else:
        X, Y = data
    X, Y = as_matrix(X, "X"), as_matrix(Y, "Y")
    analytic = gradients(net, X, Y, lam)
    worst = 0.0
    for W, G in zip(net.weights, analytic):
        for idx in np.ndindex(W.shape):
            orig = W[idx]
            W[idx] = orig + epsilon
            up = loss(net, X, Y, lam)
            W[idx] = orig - epsilon
            down = loss(net, X, Y, lam)
            W[idx] = orig
            fd = (up - down) / (2 * epsilon)
            a = G[idx]
            worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1.0))
    return worst


def train(net: DeepNet, instance, hp: HyperParams, hooks=()) -> TrainTrace:
    """Run T full-batch GD steps in place and record metrics per stride.

    Records are taken at every log_stride-th iteration plus t = 0 and
    t = T, each describing the weights after t updates. tau_detected is
    the first t whose restricted reconstruction error falls below
    C1 * gamma * ||X||_F / L. Non-finite or > 1e12 loss aborts with the
    trace collected so far and status "diverged".
    """
    hpr = resolve_hyperparams(hp, instance, net.dims.L)
    X, Y = instance.X, instance.Y
    _check_data_shapes(net, X, Y)
    L = net.dims.L
    scale = net.scale
    eta, lam = hpr.eta, hpr.lam
    X_fro = float(np.linalg.norm(X))
    tau_threshold = hpr.C1 * hpr.gamma * X_fro / L
    _, Pperp = range_projectors(Y)
    linear = not net.relu_at_penultimate
    W_orc = None
    if linear and isinstance(instance, ProblemInstance):
        try:
            W_orc = oracle_map(instance).W
        except (ValueError, ArithmeticError):
            W_orc = None
    coeffs = [_reg_coeff(net, ell, lam) for ell in range(1, L + 1)]

    records: list[dict] = []
    tau: int | None = None
    status = "ok"
    diverged_at: int | None = None
    power_v = None

    def record(t: int, phi_norm: float, loss_val: float) -> None:
        nonlocal power_v
        rec = {
            "t": t,
            "loss": loss_val,
            "recon_norm": phi_norm / X_fro,
            "recon_restricted": phi_norm,
        }
        if linear:
            F = end_to_end(net).F
            off_block = F @ Pperp
            if t == 0 or t == hpr.T:
                # calibration points use the full SVD
                rec["off_sub"] = float(np.linalg.svd(off_block, compute_uv=False)[0])
            else:
                sigma, power_v = power_opnorm(off_block, v0=power_v)
                rec["off_sub"] = float(sigma)
            if W_orc is not None:
                rec["oracle_dist"] = float(np.linalg.svd(F - W_orc, compute_uv=False)[0])
            else:
                rec["oracle_dist"] = float("nan")
        else:
            rec["off_sub"] = float("nan")
            rec["oracle_dist"] = float("nan")
        rec["weight_norms"] = tuple(float(np.linalg.norm(W)) for W in net.weights)
        for hook in hooks:
            extra = hook(t, net, rec)
            if extra:
                rec.update(extra)
        records.append(rec)

    start = time.perf_counter()
    t = 0
    while True:
        G, mask = _forward_chain(net, Y)
        Phi = scale * (net.weights[-1] @ G[-1]) - X
        phi_sq = float(np.vdot(Phi, Phi))
        loss_val = 0.5 * phi_sq + _reg_term(net, lam)
        if not np.isfinite(loss_val) or loss_val > DIVERGENCE_THRESHOLD:
            status = "diverged"
            diverged_at = t
            break
        phi_norm = math.sqrt(phi_sq)
        if tau is None and phi_norm <= tau_threshold:
            tau = t
        if t % hpr.log_stride == 0 or t == hpr.T:
            record(t, phi_norm, loss_val)
        if t == hpr.T:
            break
        # backward pass, updating each layer after its H push-down
        H = scale * Phi
        g = H @ G[L - 1].T
        if lam:
            g += coeffs[L - 1] * net.weights[-1]
        H_next = net.weights[-1].T @ H
        if mask is not None:
            H_next = H_next * mask
        net.weights[-1] -= eta * g
        H = H_next
        for i in range(L - 1, 0, -1):
            g = H @ G[i - 1].T
            if lam:
                g += coeffs[i - 1] * net.weights[i - 1]
            if i > 1:
                H_next = net.weights[i - 1].T @ H
            net.weights[i - 1] -= eta * g
            if i > 1:
                H = H_next
        t += 1

    return TrainTrace(
        records=records,
        tau_detected=tau,
        wall_time=time.perf_counter() - start,
        status=status,
        diverged_at=diverged_at,
        hp=hpr,
    )
