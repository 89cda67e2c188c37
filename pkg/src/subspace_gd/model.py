"""Deep linear (and linear+ReLU) network containers.

A net is an ordered list of dense weight matrices with shapes
d_w x m, d_w x d_w (L-2 times), d x d_w. Two parameterizations are
supported: ``raw`` pairs fan-in initialization with the plain product
W_L ... W_1, while ``normalized`` pairs standard-normal initialization
with the rescaled mapping F = d_w^{-(L-1)/2} m^{-1/2} W_L ... W_1.
The two are equivalent up to per-layer rescaling by sqrt(fan-in).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numkit import Mat, as_matrix, child_seed, gaussian
from .problem import read_matrix_block, write_matrix_block

MODES = ("raw", "normalized")


@dataclass(frozen=True)
class NetDims:
    """Layer count and the three widths that fix every weight shape."""

    L: int
    m: int
    d_w: int
    d: int

    def __post_init__(self):
        if self.L < 2:
            raise ValueError(f"need L >= 2, got L={self.L}")
        for name in ("m", "d_w", "d"):
            if getattr(self, name) < 1:
                raise ValueError(f"need {name} >= 1, got {getattr(self, name)}")

    def layer_shape(self, ell: int) -> tuple[int, int]:
        """(rows, cols) of W_ell for ell in 1..L."""
        if not 1 <= ell <= self.L:
            raise ValueError(f"layer index {ell} outside 1..{self.L}")
        rows = self.d if ell == self.L else self.d_w
        cols = self.m if ell == 1 else self.d_w
        return rows, cols

    def fan_in(self, ell: int) -> int:
        """Input width of layer ell: m for the first layer, d_w after."""
        return self.layer_shape(ell)[1]


@dataclass
class DeepNet:
    """Weights plus the parameterization they were initialized for.

    mode and relu_at_penultimate are fixed at construction; the weight
    matrices themselves are mutated in place by training updates.
    """

    dims: NetDims
    weights: list[Mat]
    mode: str
    relu_at_penultimate: bool = field(default=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        self.check_shapes()

    def check_shapes(self) -> None:
        if len(self.weights) != self.dims.L:
            raise ValueError(f"expected {self.dims.L} weight matrices, got {len(self.weights)}")
        for ell, W in enumerate(self.weights, start=1):
            want = self.dims.layer_shape(ell)
            if W.shape != want:
                raise ValueError(f"layer {ell} has shape {W.shape}, expected {want}")

    @property
    def scale(self) -> float:
        """Multiplier turning the raw product into the learned mapping F."""
        return scale_factor(self.dims, self.mode)


@dataclass(frozen=True)
class EndToEnd:
    """Raw product W_L...W_1 and the mode-scaled mapping F."""

    W_prod: Mat
    F: Mat


def scale_factor(dims: NetDims, mode: str) -> float:
    if mode == "raw":
        return 1.0
    return float(dims.d_w) ** (-(dims.L - 1) / 2) * float(dims.m) ** (-0.5)


def init_fanin(dims: NetDims, seed: int, relu_at_penultimate: bool = False) -> DeepNet:
    """Raw-mode net with [W_ell]_ij ~ N(0, 1/fan_in(ell))."""
    weights = []
    for ell in range(1, dims.L + 1):
        rows, cols = dims.layer_shape(ell)
        std = 1.0 / np.sqrt(dims.fan_in(ell))
        weights.append(gaussian(rows, cols, std, child_seed(seed, "layer", ell)))
    return DeepNet(dims=dims, weights=weights, mode="raw", relu_at_penultimate=relu_at_penultimate)


def init_standard_normal(dims: NetDims, seed: int, relu_at_penultimate: bool = False) -> DeepNet:
    """Normalized-mode net with unit-variance entries.

    Layer seeds match init_fanin, so the two inits with the same seed
    differ exactly by the per-layer factors sqrt(fan_in(ell)).
    """
    weights = []
    for ell in range(1, dims.L + 1):
        rows, cols = dims.layer_shape(ell)
        weights.append(gaussian(rows, cols, 1.0, child_seed(seed, "layer", ell)))
    return DeepNet(dims=dims, weights=weights, mode="normalized", relu_at_penultimate=relu_at_penultimate)


def copy_net(net: DeepNet) -> DeepNet:
    """Independent snapshot; mutating one net leaves the other untouched."""
    return DeepNet(
        dims=net.dims,
        weights=[W.copy() for W in net.weights],
        mode=net.mode,
        relu_at_penultimate=net.relu_at_penultimate,
    )


def end_to_end(net: DeepNet) -> EndToEnd:
    """Accumulate W_L...W_1 from the first layer upward and scale per mode."""
    if net.relu_at_penultimate:
        raise ValueError("end_to_end is defined for linear nets only")
    P = net.weights[0]
    for W in net.weights[1:]:
        P = W @ P
    return EndToEnd(W_prod=P, F=net.scale * P)


def forward(net: DeepNet, Yin) -> Mat:
    """Apply the net columnwise to Yin (m x anything).

    Linear nets return F @ Yin. The ReLU variant applies an elementwise
    max(., 0) to the depth-(L-1) preactivation before the last layer,
    with the same mode scaling on the output.
    """
    Yin = as_matrix(Yin, "Yin")
    if Yin.shape[0] != net.dims.m:
        raise ValueError(f"input has {Yin.shape[0]} rows, net expects {net.dims.m}")
    H = Yin
    for W in net.weights[:-1]:
        H = W @ H
    if net.relu_at_penultimate:
        H = np.maximum(H, 0.0)
    return net.scale * (net.weights[-1] @ H)


def save_net(net: DeepNet, path: str) -> None:
    """Checkpoint: one header line, then the L weight blocks in order."""
    with open(path, "w") as fh:
        fh.write(
            f"{net.dims.L} {net.dims.m} {net.dims.d_w} {net.dims.d} "
            f"{net.mode} {int(net.relu_at_penultimate)}\n"
        )
        for W in net.weights:
            write_matrix_block(fh, W)


def load_net(path: str) -> DeepNet:
    with open(path) as fh:
        fields = fh.readline().split()
        if len(fields) != 6:
            raise ValueError(f"{path}: header must be 'L m d_w d mode relu'")
        dims = NetDims(L=int(fields[0]), m=int(fields[1]), d_w=int(fields[2]), d=int(fields[3]))
        mode = fields[4]
        relu = bool(int(fields[5]))
        weights = [read_matrix_block(fh) for _ in range(dims.L)]
    return DeepNet(dims=dims, weights=weights, mode=mode, relu_at_penultimate=relu)
