"""Multimodal forecasting networks and the ablation ladder.

Three encoders produce feature maps that share the (F, D) grid:

    temporal: stacked ConvLSTM over the masked traffic window, with an
              optional gated shallow branch over the last few steps
    closure:  a single volumetric convolution over the closure volume,
              depth collapsed in one shot, then batch norm (no
              activation, so the encoder stays affine by default)
    season:   the flat feature vector lifted to a map by nearest
              upsampling and a transpose-convolution ladder

The decoder either keeps the grid (convolution stack ending in a
2-channel linear head) or flattens through a dense bottleneck — the
latter is the ablation that discards spatial structure.

Variant wiring:

    CNN_BASELINE       closure (target slice only) + season, conv decoder
    CONVLSTM_FLAT      all encoders, flatten -> dense -> reshape decoder
    CONVLSTM_SPATIAL   all encoders, conv decoder
    PLUS_SHALLOW_CNN   spatial + gated shallow branch, uniform deep widths
    DEEPSHALLOW        narrow-then-wide deep ladder + gated shallow branch
    DEEPSHALLOW_SHARED DEEPSHALLOW with the shallow kernel tied to the
                       deep first layer's input kernel
"""

from __future__ import annotations

import dataclasses
import math

import torch
from torch import nn
from torch.nn import functional as torchfn

from .errors import ConfigurationError, DataIntegrityError, FitError, ShapeError

VARIANTS = (
    "CNN_BASELINE",
    "CONVLSTM_FLAT",
    "CONVLSTM_SPATIAL",
    "PLUS_SHALLOW_CNN",
    "DEEPSHALLOW",
    "DEEPSHALLOW_SHARED",
)

GATED_VARIANTS = ("PLUS_SHALLOW_CNN", "DEEPSHALLOW", "DEEPSHALLOW_SHARED")
LADDER_VARIANTS = ("DEEPSHALLOW", "DEEPSHALLOW_SHARED")


@dataclasses.dataclass(frozen=True)
class HyperParams:
    window_size: int = 5
    temporal_channels: int = 16
    closure_channels: int = 16
    season_channels: int = 16
    kernel_size: int = 3
    closure_kernel: int = 3
    deep_layers: int = 2
    shallow_steps: int = 2
    season_strides: tuple[int, ...] = (2,)
    closure_activation: str = "none"
    decoder_channels: int = 32
    decoder_layers: int = 2
    flat_hidden: int = 128
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 40
    seed: int = 0

    def __post_init__(self):
        for name in (
            "temporal_channels", "closure_channels", "season_channels",
            "deep_layers", "shallow_steps", "decoder_channels",
            "decoder_layers", "flat_hidden", "batch_size",
        ):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.window_size < 0:
            raise ConfigurationError("window_size must be >= 0")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        for name in ("kernel_size", "closure_kernel"):
            k = getattr(self, name)
            if k < 1 or k % 2 == 0:
                raise ConfigurationError(f"{name} must be odd (same-padding), got {k}")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.closure_activation not in ("none", "relu"):
            raise ConfigurationError("closure_activation must be 'none' or 'relu'")
        if any(s < 1 for s in self.season_strides):
            raise ConfigurationError("season strides must be >= 1")


class ConvLSTMCell(nn.Module):
    """One convolutional LSTM step on (B, C, F, D) maps.

    Gates in chunk order (i, f, g, o): sigmoid input/forget/output gates
    and a tanh candidate, all from conv(x) + conv(h) with one shared
    bias on the input convolution. The forget-gate bias starts at +1.
    """

    def __init__(self, in_channels: int, hidden_channels: int, kernel_size: int):
        super().__init__()
        pad = kernel_size // 2
        self.hidden_channels = hidden_channels
        self.conv_x = nn.Conv2d(
            in_channels, 4 * hidden_channels, kernel_size, padding=pad, bias=True
        )
        self.conv_h = nn.Conv2d(
            hidden_channels, 4 * hidden_channels, kernel_size, padding=pad, bias=False
        )
        with torch.no_grad():
            self.conv_x.bias[hidden_channels:2 * hidden_channels] += 1.0

    def forward(self, x, state):
        h, c = state
        if h.shape[-2:] != x.shape[-2:]:
            raise ShapeError(
                f"state spatial dims {tuple(h.shape[-2:])} do not match input "
                f"{tuple(x.shape[-2:])}"
            )
        gates = self.conv_x(x) + self.conv_h(h)
        i, f, g, o = torch.chunk(gates, 4, dim=1)
        c_next = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h_next = torch.sigmoid(o) * torch.tanh(c_next)
        return h_next, c_next

    def initial_state(self, batch: int, height: int, width: int, like: torch.Tensor):
        shape = (batch, self.hidden_channels, height, width)
        zero = torch.zeros(shape, dtype=like.dtype, device=like.device)
        return zero, zero.clone()


class ConvLSTMStack(nn.Module):
    """Stacked ConvLSTM; returns the top layer's final hidden map."""

    def __init__(self, in_channels: int, hidden_sizes: list[int], kernel_size: int):
        super().__init__()
        cells = []
        prev = in_channels
        for h in hidden_sizes:
            cells.append(ConvLSTMCell(prev, h, kernel_size))
            prev = h
        self.cells = nn.ModuleList(cells)

    def forward(self, seq):
        # seq: (B, T, C, F, D)
        b, t, _, fdim, ddim = seq.shape
        states = [cell.initial_state(b, fdim, ddim, seq) for cell in self.cells]
        for step in range(t):
            x = seq[:, step]
            for idx, cell in enumerate(self.cells):
                states[idx] = cell(x, states[idx])
                x = states[idx][0]
        return states[-1][0]


class ShallowBranch(nn.Module):
    """Single convolution over the channel-concatenated last s steps.

    With shared=True the kernel is not owned here: the deep stack's
    first-layer input kernel (one block per input channel group) is
    repeated across the s step groups at call time, so the two branches
    update one parameter tensor.
    """

    def __init__(
        self,
        in_channels: int,
        steps: int,
        out_channels: int,
        kernel_size: int,
        shared_source: nn.Conv2d | None = None,
    ):
        super().__init__()
        self.steps = steps
        self.kernel_size = kernel_size
        self.shared_source = None
        if shared_source is None:
            self.conv = nn.Conv2d(
                in_channels * steps, out_channels, kernel_size,
                padding=kernel_size // 2, bias=True,
            )
        else:
            src_out, src_in = shared_source.weight.shape[:2]
            if src_out != out_channels or src_in != in_channels:
                raise ConfigurationError(
                    "shared shallow kernel needs the deep first layer to map "
                    f"{in_channels} -> {out_channels} channels; it maps "
                    f"{src_in} -> {src_out}"
                )
            self.shared_source = [shared_source]  # plain list: not a submodule
            self.bias = nn.Parameter(torch.zeros(out_channels))

    def forward(self, last_steps):
        # last_steps: (B, s, C, F, D) -> (B, s*C, F, D)
        b, s, c, fdim, ddim = last_steps.shape
        x = last_steps.reshape(b, s * c, fdim, ddim)
        if self.shared_source is None:
            return self.conv(x)
        weight = self.shared_source[0].weight
        tiled = torch.cat([weight] * self.steps, dim=1)
        return torchfn.conv2d(x, tiled, self.bias, padding=self.kernel_size // 2)


class TemporalEncoder(nn.Module):
    """ConvLSTM over the window, with an optional gated shallow branch.

    Deep-ladder variants run narrow early ConvLSTM layers and widen only
    at the top; the gate merges as deep + sigmoid(gate) * shallow, one
    learned logit per channel (zero-initialized, so the blend starts at
    half strength).
    """

    def __init__(self, variant: str, hp: HyperParams, in_channels: int, n_steps: int):
        super().__init__()
        self.variant = variant
        c_t = hp.temporal_channels
        if variant in LADDER_VARIANTS:
            if c_t % 4 != 0:
                raise ConfigurationError(
                    f"deep-ladder variants need temporal_channels divisible by 4, got {c_t}"
                )
            hidden = [c_t // 4] * (hp.deep_layers - 1) + [c_t]
        else:
            hidden = [c_t] * hp.deep_layers
        self.deep = ConvLSTMStack(in_channels, hidden, hp.kernel_size)
        self.gated = variant in GATED_VARIANTS
        if self.gated:
            if n_steps < hp.shallow_steps:
                raise ConfigurationError(
                    f"window has {n_steps} steps but the shallow branch needs "
                    f"{hp.shallow_steps}"
                )
            shared = None
            if variant == "DEEPSHALLOW_SHARED":
                shared = self.deep.cells[0].conv_x
            self.shallow = ShallowBranch(
                in_channels, hp.shallow_steps, c_t, hp.kernel_size, shared_source=shared
            )
            self.gate_logit = nn.Parameter(torch.zeros(c_t))

    def forward(self, seq):
        deep = self.deep(seq)
        if not self.gated:
            return deep
        shallow = self.shallow(seq[:, -self.shallow.steps:])
        gate = torch.sigmoid(self.gate_logit)[None, :, None, None]
        return deep + gate * shallow


class ClosureEncoder(nn.Module):
    """BatchNorm(Conv3D(volume)): one valid-padding depth kernel collapses
    the member axis, same-padding preserves (F, D).

    Affine by default (no activation), so in eval mode with frozen
    running stats the whole encoder is a linear map plus offset.
    """

    def __init__(self, depth: int, out_channels: int, kernel_size: int, activation: str = "none"):
        super().__init__()
        self.conv = nn.Conv3d(
            1, out_channels, (depth, kernel_size, kernel_size),
            padding=(0, kernel_size // 2, kernel_size // 2),
        )
        self.bn = nn.BatchNorm2d(out_channels)
        self.activation = activation

    def forward(self, volume):
        # volume: (B, T, F, D)
        if self.training and volume.shape[0] < 2:
            raise FitError(
                "batch normalization needs batch size >= 2 in training mode",
                diagnostics={"batch_size": int(volume.shape[0])},
            )
        x = self.conv(volume.unsqueeze(1)).squeeze(2)
        x = self.bn(x)
        if self.activation == "relu":
            x = torch.relu(x)
        return x


class SeasonEncoder(nn.Module):
    """Vector -> map: nearest upsampling then a transpose-conv ladder.

    The ladder's stride product must divide (F, D) exactly; an empty
    ladder upsamples straight to (F, D) and projects channels 1x1,
    which keeps the map constant over space.
    """

    def __init__(self, in_len: int, out_channels: int, f_dim: int, d_dim: int,
                 strides: tuple[int, ...]):
        super().__init__()
        total = math.prod(strides) if strides else 1
        if f_dim % total or d_dim % total:
            reachable_f = (f_dim // total * total, (f_dim // total + 1) * total)
            reachable_d = (d_dim // total * total, (d_dim // total + 1) * total)
            raise ConfigurationError(
                f"season stride ladder {strides} (factor {total}) cannot reach "
                f"({f_dim}, {d_dim}); nearest achievable sizes are F in "
                f"{reachable_f}, D in {reachable_d}"
            )
        self.base = (f_dim // total, d_dim // total)
        self.upsample = nn.Upsample(size=self.base, mode="nearest")
        layers = []
        prev = in_len
        for s in strides:
            layers.append(nn.ConvTranspose2d(prev, out_channels, kernel_size=s, stride=s))
            prev = out_channels
        if not strides:
            layers.append(nn.Conv2d(prev, out_channels, kernel_size=1))
        self.ladder = nn.ModuleList(layers)

    def forward(self, vec):
        x = self.upsample(vec[:, :, None, None])
        for layer in self.ladder:
            x = layer(x)
        return x


class SpatialDecoder(nn.Module):
    """Same-padded convolution stack ending in a 2-channel linear head."""

    def __init__(self, in_channels: int, hp: HyperParams):
        super().__init__()
        pad = hp.kernel_size // 2
        layers = []
        prev = in_channels
        for _ in range(hp.decoder_layers):
            layers.append(nn.Conv2d(prev, hp.decoder_channels, hp.kernel_size, padding=pad))
            prev = hp.decoder_channels
        self.convs = nn.ModuleList(layers)
        self.head = nn.Conv2d(prev, 2, kernel_size=1)

    def forward(self, x):
        for conv in self.convs:
            x = torch.relu(conv(x))
        return self.head(x)


class FlatDecoder(nn.Module):
    """Flatten -> dense bottleneck -> reshape; discards spatial layout.

    The bottleneck is leaky: with a fan-in of channels * F * D, adaptive
    per-parameter steps can push every hidden pre-activation negative in
    a single epoch, and a hard ReLU then has no gradient path back.
    """

    def __init__(self, in_channels: int, f_dim: int, d_dim: int, hp: HyperParams):
        super().__init__()
        self.f_dim, self.d_dim = f_dim, d_dim
        self.fc1 = nn.Linear(in_channels * f_dim * d_dim, hp.flat_hidden)
        self.fc2 = nn.Linear(hp.flat_hidden, f_dim * d_dim * 2)

    def forward(self, x):
        b = x.shape[0]
        hidden = torch.nn.functional.leaky_relu(self.fc1(x.reshape(b, -1)), 0.1)
        return self.fc2(hidden).reshape(b, 2, self.f_dim, self.d_dim)


class TrafficNet(nn.Module):
    """One ablation-ladder variant wired end to end.

    Batches are dicts of float tensors:
        traffic (B, n+1, F, D, 2)   masked, normalized, sentinel -1
        closure (B, n+1, F, D)      unmasked fractions
        season  (B, L)
        label   (B, F, D, 2)        full unmasked normalized target
    Output is (B, F, D, 2) on the normalized scale.
    """

    def __init__(self, variant: str, hp: HyperParams, f_dim: int, d_dim: int,
                 n_history: int, season_len: int):
        super().__init__()
        if variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {variant!r}; one of {VARIANTS}")
        self.variant = variant
        self.hp = hp
        self.dims = (f_dim, d_dim)
        self.n_history = n_history
        channels = 0
        if variant != "CNN_BASELINE":
            self.temporal = TemporalEncoder(variant, hp, 2, n_history + 1)
            channels += hp.temporal_channels
        self.closure_depth = 1 if variant == "CNN_BASELINE" else n_history + 1
        self.closure_enc = ClosureEncoder(
            self.closure_depth, hp.closure_channels, hp.closure_kernel,
            activation=hp.closure_activation,
        )
        channels += hp.closure_channels
        self.season_enc = SeasonEncoder(
            season_len, hp.season_channels, f_dim, d_dim, tuple(hp.season_strides)
        )
        channels += hp.season_channels
        if variant == "CONVLSTM_FLAT":
            self.decoder = FlatDecoder(channels, f_dim, d_dim, hp)
        else:
            self.decoder = SpatialDecoder(channels, hp)

    def forward(self, batch):
        maps = []
        if self.variant != "CNN_BASELINE":
            seq = batch["traffic"].permute(0, 1, 4, 2, 3)  # (B, T, C, F, D)
            maps.append(self.temporal(seq))
        closure = batch["closure"]
        if self.variant == "CNN_BASELINE":
            closure = closure[:, -1:]
        maps.append(self.closure_enc(closure))
        maps.append(self.season_enc(batch["season"]))
        fused = torch.cat(maps, dim=1)
        return self.decoder(fused).permute(0, 2, 3, 1)


def mse_loss(pred: torch.Tensor, label: torch.Tensor) -> torch.Tensor:
    """Mean squared error over every cell of the full unmasked label."""
    if bool((label == -1).any()):
        raise DataIntegrityError("label tensor contains sentinel values")
    return torch.mean((pred - label) ** 2)


def build_model(variant: str, hp: HyperParams, f_dim: int, d_dim: int,
                n_history: int, season_len: int) -> TrafficNet:
    return TrafficNet(variant, hp, f_dim, d_dim, n_history, season_len)


def parameter_audit(model: nn.Module) -> dict:
    """Parameter counts per top-level submodule plus the total."""
    by_module: dict[str, int] = {}
    for name, param in model.named_parameters():
        top = name.split(".", 1)[0]
        by_module[top] = by_module.get(top, 0) + param.numel()
    return {"total": sum(by_module.values()), "by_module": by_module}
