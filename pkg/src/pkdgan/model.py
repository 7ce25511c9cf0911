"""Encoder-decoder-encoder generator, discriminator, and cost accounting.

The backbone is the 32-pixel DCGAN ladder: three strided 4x4 conv blocks
(32 -> 16 -> 8 -> 4) followed by a valid 4x4 projection to a 1x1 latent, and
the mirrored transposed-conv ladder on the way back up.
"""

from dataclasses import dataclass, field

import torch
import torch.nn as nn

KERNEL = 4
STRIDE = 2
IMAGE_SIZE = 32


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ArchSpec:
    """Channel/latent configuration of one network (teacher or student)."""

    input_channels: int = 3
    channels: tuple = (64, 128, 256)
    latent_dim: int = 256
    image_size: int = IMAGE_SIZE
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.input_channels not in (1, 3):
            raise SpecError("input_channels must be 1 or 3")
        if self.image_size != IMAGE_SIZE:
            raise SpecError("image_size must be %d" % IMAGE_SIZE)
        c = tuple(int(x) for x in self.channels)
        if len(c) != 3 or any(x < 1 for x in c):
            raise SpecError("channels must be a triple of positive ints")
        if not (c[0] <= c[1] <= c[2]):
            raise SpecError("channels must be non-decreasing")
        if self.latent_dim < 1:
            raise SpecError("latent_dim must be positive")
        object.__setattr__(self, "channels", c)

    def to_dict(self):
        return {
            "input_channels": self.input_channels,
            "channels": list(self.channels),
            "latent_dim": self.latent_dim,
            "image_size": self.image_size,
            "leaky_slope": self.leaky_slope,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(input_channels=int(d["input_channels"]),
                   channels=tuple(d["channels"]),
                   latent_dim=int(d["latent_dim"]),
                   image_size=int(d.get("image_size", IMAGE_SIZE)),
                   leaky_slope=float(d.get("leaky_slope", 0.2)))


TEACHER_CHANNELS = (64, 128, 256)
STUDENT_CHANNELS = {
    "cifar10": (8, 16, 64),
    "mnist": (2, 4, 8),
    "fmnist": (1, 2, 4),
}


def teacher_spec(input_channels=3):
    return ArchSpec(input_channels=input_channels, channels=TEACHER_CHANNELS)


def student_spec(dataset, input_channels=None):
    if input_channels is None:
        input_channels = 3 if dataset == "cifar10" else 1
    return ArchSpec(input_channels=input_channels,
                    channels=STUDENT_CHANNELS[dataset])


class Encoder(nn.Module):
    """(N, C, 32, 32) -> (N, d): three strided conv blocks + latent projection."""

    def __init__(self, spec):
        super().__init__()
        c1, c2, c3 = spec.channels
        self.spec = spec
        self.blocks = nn.Sequential(
            self._block(spec.input_channels, c1, spec.leaky_slope),
            self._block(c1, c2, spec.leaky_slope),
            self._block(c2, c3, spec.leaky_slope),
        )
        # final 4x4 valid conv, no norm, no activation
        self.to_latent = nn.Conv2d(c3, spec.latent_dim, KERNEL, 1, 0)

    @staticmethod
    def _block(c_in, c_out, slope):
        return nn.Sequential(
            nn.Conv2d(c_in, c_out, KERNEL, STRIDE, 1),
            nn.BatchNorm2d(c_out),
            nn.LeakyReLU(slope),
        )

    def forward(self, x):
        return self.to_latent(self.blocks(x)).flatten(1)


class Decoder(nn.Module):
    """(N, d) -> (N, C, 32, 32) via mirrored transposed convs, Tanh output."""

    def __init__(self, spec):
        super().__init__()
        c1, c2, c3 = spec.channels
        self.spec = spec
        self.net = nn.Sequential(
            nn.ConvTranspose2d(spec.latent_dim, c3, KERNEL, 1, 0),
            nn.BatchNorm2d(c3),
            nn.ReLU(),
            nn.ConvTranspose2d(c3, c2, KERNEL, STRIDE, 1),
            nn.BatchNorm2d(c2),
            nn.ReLU(),
            nn.ConvTranspose2d(c2, c1, KERNEL, STRIDE, 1),
            nn.BatchNorm2d(c1),
            nn.ReLU(),
            nn.ConvTranspose2d(c1, spec.input_channels, KERNEL, STRIDE, 1),
            nn.Tanh(),
        )

    def forward(self, z):
        return self.net(z.view(z.shape[0], -1, 1, 1))


class Generator(nn.Module):
    """Encoder-decoder-encoder pipeline producing (z1, x_hat, z2)."""

    def __init__(self, spec):
        super().__init__()
        self.spec = spec
        self.encoder = Encoder(spec)
        self.decoder = Decoder(spec)
        self.re_encoder = Encoder(spec)

    def forward(self, x):
        z1 = self.encoder(x)
        x_hat = self.decoder(z1)
        z2 = self.re_encoder(x_hat)
        return z1, x_hat, z2


class Discriminator(nn.Module):
    """Encoder trunk with a sigmoid head; exposes the third-block feature tap."""

    def __init__(self, spec):
        super().__init__()
        c1, c2, c3 = spec.channels
        self.spec = spec
        self.features = nn.Sequential(
            Encoder._block(spec.input_channels, c1, spec.leaky_slope),
            Encoder._block(c1, c2, spec.leaky_slope),
            Encoder._block(c2, c3, spec.leaky_slope),
        )
        self.head = nn.Conv2d(c3, 1, KERNEL, 1, 0)

    def forward(self, x):
        feat = self.features(x)
        p = torch.sigmoid(self.head(feat)).flatten(1).squeeze(1)
        return p, feat


def init_weights(module, generator=None):
    """DCGAN init: conv weights ~ N(0, 0.02), BN scale ~ N(1, 0.02), shifts 0."""
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                m.weight.normal_(0.0, 0.02, generator=generator)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, nn.BatchNorm2d):
                m.weight.normal_(1.0, 0.02, generator=generator)
                m.bias.zero_()
    return module


def build_encoder(spec, generator=None):
    return init_weights(Encoder(spec), generator)


def build_decoder(spec, generator=None):
    return init_weights(Decoder(spec), generator)


def build_generator(spec, generator=None):
    return init_weights(Generator(spec), generator)


def build_discriminator(spec, generator=None):
    return init_weights(Discriminator(spec), generator)


@dataclass
class CostReport:
    """Generator-only parameter and multiply-accumulate counts."""

    param_count: int
    flop_count: int


def _encoder_layers(spec):
    """(c_in, c_out, out_hw) per conv layer of one encoder."""
    c1, c2, c3 = spec.channels
    return [
        (spec.input_channels, c1, 16),
        (c1, c2, 8),
        (c2, c3, 4),
        (c3, spec.latent_dim, 1),
    ]


def count_params(spec):
    """Generator parameter count (conv weights + biases + BatchNorm affine)."""
    k2 = KERNEL * KERNEL
    enc = 0
    for c_in, c_out, _ in _encoder_layers(spec):
        enc += k2 * c_in * c_out + c_out  # conv weight + bias
    for _, c_out, hw in _encoder_layers(spec)[:3]:
        enc += 2 * c_out  # BN scale + shift on the three strided blocks
    dec = 0
    for c_in, c_out, _ in _encoder_layers(spec):
        dec += k2 * c_in * c_out + c_in  # mirrored transposed conv: out ch = c_in
    for _, c_out, _ in _encoder_layers(spec)[:3]:
        dec += 2 * c_out
    return 2 * enc + dec


def count_flops(spec):
    """Generator forward MACs: convs at output positions, transposed convs at
    input positions (identical to the mirrored conv); BN/activation/bias excluded.
    Decoder cost therefore equals encoder cost, so the generator is 3x one encoder."""
    k2 = KERNEL * KERNEL
    enc = sum(hw * hw * c_out * k2 * c_in
              for c_in, c_out, hw in _encoder_layers(spec))
    return 3 * enc


def cost_report(spec):
    return CostReport(param_count=count_params(spec), flop_count=count_flops(spec))
