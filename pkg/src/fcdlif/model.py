"""Network assembly: spatial feature extractor, temporal feature extractor,
and the fixed-length comparator model.

The spatial encoder applies the same 3D convolutional weights to every time
frame independently, condensing each volume to an embedding vector.  The
embeddings are stacked along time and a 1D convolutional stack (stride 1,
odd kernels, same padding) reduces the channel count to one, so the output
curve always has exactly as many samples as the input has frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import DynamicPetImage, InputFunction
from .errors import ConfigurationError, FixedLengthError, ShapeError

POOL_WINDOW = (2, 2, 2)


def _he_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class SfeConfig:
    """Layout of the spatial feature extractor.

    ``channels`` gives the width of each stage; a 2x2x2 max-pool sits between
    consecutive stages.  The last stage feeds a cuboid-kernel convolution and
    adaptive average pooling that produce the ``embedding_dim`` vector.
    """

    spatial_shape: tuple = (96, 48, 48)
    channels: tuple = (8, 16, 32)
    blocks_per_stage: int = 1
    final_kernel: tuple = (4, 2, 2)
    embedding_dim: int = 32

    def __post_init__(self):
        self.spatial_shape = tuple(int(v) for v in self.spatial_shape)
        self.channels = tuple(int(c) for c in self.channels)
        self.final_kernel = tuple(int(k) for k in self.final_kernel)
        if len(self.spatial_shape) != 3 or any(v < 1 for v in self.spatial_shape):
            raise ConfigurationError(f"invalid spatial shape {self.spatial_shape}")
        if not self.channels or any(c < 1 for c in self.channels):
            raise ConfigurationError(f"invalid stage channels {self.channels}")
        if self.blocks_per_stage < 1:
            raise ConfigurationError("blocks_per_stage must be >= 1")
        if self.embedding_dim < 1:
            raise ConfigurationError("embedding_dim must be >= 1")
        self.stage_shapes()  # validates pooling/kernel pipeline

    def stage_shapes(self):
        """Spatial extents seen by each stage; raises if a stage cannot run."""
        shapes = []
        shape = self.spatial_shape
        for i in range(len(self.channels)):
            shapes.append(shape)
            if i < len(self.channels) - 1:
                if any(s < w for s, w in zip(shape, POOL_WINDOW)):
                    raise ConfigurationError(
                        f"stage {i + 1}: extents {shape} too small for "
                        f"{POOL_WINDOW} max-pool")
                shape = tuple(s // w for s, w in zip(shape, POOL_WINDOW))
        if any(s < k for s, k in zip(shape, self.final_kernel)):
            raise ConfigurationError(
                f"final stage: extents {shape} smaller than the "
                f"{self.final_kernel} cuboid kernel")
        return shapes


@dataclass
class TfeConfig:
    """Layout of the temporal feature extractor.

    ``channels`` lists the output width of each 1D convolution, descending
    from the embedding width to exactly 1; all kernels are odd so same
    padding preserves the frame count for any input length.
    """

    in_channels: int = 32
    channels: tuple = (16, 8, 4, 1)
    kernel_sizes: tuple = (5, 5, 5, 5)

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.kernel_sizes = tuple(int(k) for k in self.kernel_sizes)
        if len(self.channels) != len(self.kernel_sizes):
            raise ConfigurationError("channels and kernel_sizes lengths differ")
        if not self.channels or self.channels[-1] != 1:
            raise ConfigurationError("last temporal layer must have exactly 1 channel")
        widths = (self.in_channels,) + self.channels
        if any(b > a for a, b in zip(widths, widths[1:])):
            raise ConfigurationError(f"channel widths must descend, got {widths}")
        for k in self.kernel_sizes:
            ad.same_padding(k)  # raises on even kernels

    @classmethod
    def for_embedding(cls, embedding_dim: int, num_layers: int = 4,
                      kernel_size: int = 5) -> "TfeConfig":
        """Halve the width per layer down to a single output channel."""
        channels = []
        width = embedding_dim
        for _ in range(num_layers - 1):
            width = max(width // 2, 1)
            channels.append(width)
        channels.append(1)
        return cls(in_channels=embedding_dim, channels=tuple(channels),
                   kernel_sizes=(kernel_size,) * num_layers)

    @property
    def receptive_radius(self) -> int:
        """Half-width of the temporal receptive field of the whole stack."""
        return sum((k - 1) // 2 for k in self.kernel_sizes)


def paper_scale_sfe() -> SfeConfig:
    """Reference layout for full-size 96x48x48 volumes."""
    return SfeConfig()


def desk_scale_sfe() -> SfeConfig:
    """Small preset so experiments and tests run in seconds."""
    return SfeConfig(spatial_shape=(24, 16, 16), channels=(4, 8, 16),
                     embedding_dim=16)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

class _Conv3d:
    def __init__(self, rng, name, c_in, c_out, kernel, padding):
        fan_in = c_in * int(np.prod(kernel))
        self.kernel = ad.parameter(_he_uniform(rng, (c_out, c_in) + tuple(kernel), fan_in),
                                   name=f"{name}.kernel")
        self.bias = ad.parameter(np.zeros(c_out, dtype=np.float32), name=f"{name}.bias")
        self.padding = padding

    def __call__(self, x):
        return ad.add_channel_bias(ad.conv3d(x, self.kernel, padding=self.padding),
                                   self.bias)

    def parameters(self):
        yield self.kernel
        yield self.bias


class _InstanceNorm:
    def __init__(self, name, channels):
        self.scale = ad.parameter(np.ones(channels, dtype=np.float32),
                                  name=f"{name}.scale")
        self.shift = ad.parameter(np.zeros(channels, dtype=np.float32),
                                  name=f"{name}.shift")

    def __call__(self, x):
        return ad.instance_norm(x, self.scale, self.shift)

    def parameters(self):
        yield self.scale
        yield self.shift


class _ResidualBlock3d:
    """conv-norm-relu-conv-norm plus identity skip, relu on the sum."""

    def __init__(self, rng, name, channels):
        self.conv1 = _Conv3d(rng, f"{name}.conv1", channels, channels, (3, 3, 3), 1)
        self.norm1 = _InstanceNorm(f"{name}.norm1", channels)
        self.conv2 = _Conv3d(rng, f"{name}.conv2", channels, channels, (3, 3, 3), 1)
        self.norm2 = _InstanceNorm(f"{name}.norm2", channels)

    def __call__(self, x):
        h = ad.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return ad.relu(ad.residual_add(h, x))

    def parameters(self):
        for layer in (self.conv1, self.norm1, self.conv2, self.norm2):
            yield from layer.parameters()


class SpatialEncoder:
    """Per-frame 3D trunk reducing one volume to an embedding vector."""

    def __init__(self, config: SfeConfig, rng):
        self.config = config
        self.stages = []
        c_prev = 1
        for i, c in enumerate(config.channels):
            entry_conv = _Conv3d(rng, f"sfe.stage{i}.entry", c_prev, c, (3, 3, 3), 1)
            entry_norm = _InstanceNorm(f"sfe.stage{i}.entry_norm", c)
            blocks = [_ResidualBlock3d(rng, f"sfe.stage{i}.block{b}", c)
                      for b in range(config.blocks_per_stage)]
            self.stages.append((entry_conv, entry_norm, blocks))
            c_prev = c
        self.final_conv = _Conv3d(rng, "sfe.final", c_prev, config.embedding_dim,
                                  config.final_kernel, 0)

    def __call__(self, frame: Tensor) -> Tensor:
        if frame.shape[1:] != self.config.spatial_shape:
            raise ShapeError(
                f"frame spatial shape {frame.shape[1:]} does not match the model's "
                f"{self.config.spatial_shape}; volumes must be resampled to the "
                f"trained spatial dimensions before inference")
        h = frame
        last = len(self.stages) - 1
        for i, (entry_conv, entry_norm, blocks) in enumerate(self.stages):
            h = ad.relu(entry_norm(entry_conv(h)))
            for block in blocks:
                h = block(h)
            if i < last:
                h = ad.maxpool3d(h, POOL_WINDOW)
        h = ad.relu(self.final_conv(h))
        return ad.adaptive_avg_pool(h)

    def parameters(self):
        for entry_conv, entry_norm, blocks in self.stages:
            yield from entry_conv.parameters()
            yield from entry_norm.parameters()
            for block in blocks:
                yield from block.parameters()
        yield from self.final_conv.parameters()


class TemporalEncoder:
    """1D convolutional stack over the (E, T) embedding sequence."""

    def __init__(self, config: TfeConfig, rng):
        self.config = config
        self.layers = []
        c_prev = config.in_channels
        for i, (c, k) in enumerate(zip(config.channels, config.kernel_sizes)):
            fan_in = c_prev * k
            kernel = ad.parameter(_he_uniform(rng, (c, c_prev, k), fan_in),
                                  name=f"tfe.layer{i}.kernel")
            bias = ad.parameter(np.zeros(c, dtype=np.float32),
                                name=f"tfe.layer{i}.bias")
            self.layers.append((kernel, bias, ad.same_padding(k)))
            c_prev = c

    def __call__(self, seq: Tensor) -> Tensor:
        h = seq
        last = len(self.layers) - 1
        for i, (kernel, bias, pad) in enumerate(self.layers):
            h = ad.add_channel_bias(ad.conv1d(h, kernel, stride=1, padding=pad), bias)
            if i < last:  # final layer stays linear
                h = ad.relu(h)
        return h

    def parameters(self):
        for kernel, bias, _ in self.layers:
            yield kernel
            yield bias


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

def _frames_array(image) -> np.ndarray:
    if isinstance(image, DynamicPetImage):
        return image.data
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 4:
        raise ShapeError(f"expected a (T,X,Y,Z) array, got shape {arr.shape}")
    return arr


class FcDlifModel:
    """Fully convolutional predictor: arbitrary-length frame sequences in,
    same-length concentration curve out."""

    def __init__(self, sfe_config: SfeConfig, tfe_config: TfeConfig, seed: int = 0):
        if tfe_config.in_channels != sfe_config.embedding_dim:
            raise ConfigurationError(
                f"temporal stack expects {tfe_config.in_channels} channels but the "
                f"spatial encoder emits {sfe_config.embedding_dim}")
        self.sfe_config = sfe_config
        self.tfe_config = tfe_config
        self.seed = int(seed)
        rng = np.random.Generator(np.random.PCG64(self.seed))
        self.sfe = SpatialEncoder(sfe_config, rng)
        self.tfe = TemporalEncoder(tfe_config, rng)

    def parameters(self):
        yield from self.sfe.parameters()
        yield from self.tfe.parameters()

    @property
    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    @property
    def receptive_radius(self) -> int:
        return self.tfe_config.receptive_radius

    def embed_frames(self, image) -> list:
        frames = _frames_array(image)
        if frames.shape[0] < 1:
            raise ShapeError("input must contain at least one frame")
        return [self.sfe(Tensor(frames[t][None])) for t in range(frames.shape[0])]

    def forward(self, image) -> Tensor:
        """Differentiable forward pass; returns the unclamped (T,) curve."""
        seq = ad.stack_columns(self.embed_frames(image))
        out = self.tfe(seq)
        return ad.reshape(out, (out.shape[1],))

    def predict(self, image) -> InputFunction:
        """Inference: forward pass with the output clamped at zero."""
        with ad.no_grad():
            curve = self.forward(image).data
        values = np.maximum(curve.astype(np.float64), 0.0)
        if isinstance(image, DynamicPetImage):
            return InputFunction.from_schedule(values, image.schedule)
        return InputFunction(values, np.arange(values.size, dtype=np.float64))

    def extract_sfe_features(self, image) -> np.ndarray:
        """(E, T) matrix of per-frame embeddings, before the temporal stack."""
        with ad.no_grad():
            cols = self.embed_frames(image)
            return np.stack([c.data for c in cols], axis=1)

    def config_dict(self) -> dict:
        return {
            "kind": "fcdlif",
            "seed": self.seed,
            "sfe": {
                "spatial_shape": list(self.sfe_config.spatial_shape),
                "channels": list(self.sfe_config.channels),
                "blocks_per_stage": self.sfe_config.blocks_per_stage,
                "final_kernel": list(self.sfe_config.final_kernel),
                "embedding_dim": self.sfe_config.embedding_dim,
            },
            "tfe": {
                "in_channels": self.tfe_config.in_channels,
                "channels": list(self.tfe_config.channels),
                "kernel_sizes": list(self.tfe_config.kernel_sizes),
            },
        }


class BaselineModel:
    """Comparator with a convolutional trunk and a dense head.

    The dense head maps the flattened per-frame embeddings to exactly
    ``fixed_frames`` outputs, so any other input length is rejected.
    """

    def __init__(self, sfe_config: SfeConfig, fixed_frames: int = 42, seed: int = 0):
        self.sfe_config = sfe_config
        self.fixed_frames = int(fixed_frames)
        self.seed = int(seed)
        rng = np.random.Generator(np.random.PCG64(self.seed))
        self.trunk = SpatialEncoder(sfe_config, rng)
        in_features = sfe_config.embedding_dim * self.fixed_frames
        self.head_weight = ad.parameter(
            _he_uniform(rng, (self.fixed_frames, in_features), in_features),
            name="head.weight")
        self.head_bias = ad.parameter(np.zeros(self.fixed_frames, dtype=np.float32),
                                      name="head.bias")

    def parameters(self):
        yield from self.trunk.parameters()
        yield self.head_weight
        yield self.head_bias

    @property
    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def forward(self, image) -> Tensor:
        frames = _frames_array(image)
        if frames.shape[0] != self.fixed_frames:
            raise FixedLengthError(
                f"baseline head is fixed to {self.fixed_frames} frames, "
                f"got {frames.shape[0]}")
        cols = [self.trunk(Tensor(frames[t][None])) for t in range(frames.shape[0])]
        seq = ad.stack_columns(cols)
        flat = ad.reshape(seq, (seq.size,))
        return ad.add(ad.matvec(self.head_weight, flat), self.head_bias)

    def predict(self, image) -> InputFunction:
        with ad.no_grad():
            curve = self.forward(image).data
        values = np.maximum(curve.astype(np.float64), 0.0)
        if isinstance(image, DynamicPetImage):
            return InputFunction.from_schedule(values, image.schedule)
        return InputFunction(values, np.arange(values.size, dtype=np.float64))

    def config_dict(self) -> dict:
        return {
            "kind": "baseline",
            "seed": self.seed,
            "fixed_frames": self.fixed_frames,
            "sfe": {
                "spatial_shape": list(self.sfe_config.spatial_shape),
                "channels": list(self.sfe_config.channels),
                "blocks_per_stage": self.sfe_config.blocks_per_stage,
                "final_kernel": list(self.sfe_config.final_kernel),
                "embedding_dim": self.sfe_config.embedding_dim,
            },
        }


def build_fcdlif(sfe: SfeConfig = None, tfe: TfeConfig = None, seed: int = 0) -> FcDlifModel:
    """Assemble the model; same seed gives bit-identical parameters."""
    sfe = sfe or paper_scale_sfe()
    tfe = tfe or TfeConfig.for_embedding(sfe.embedding_dim)
    return FcDlifModel(sfe, tfe, seed=seed)


def build_desk_fcdlif(seed: int = 0) -> FcDlifModel:
    sfe = desk_scale_sfe()
    return FcDlifModel(sfe, TfeConfig.for_embedding(sfe.embedding_dim), seed=seed)


def build_baseline(seed: int = 0, sfe: SfeConfig = None,
                   fixed_frames: int = 42) -> BaselineModel:
    """Fixed-length comparator at full scale by default."""
    if sfe is None:
        sfe = SfeConfig(spatial_shape=(96, 48, 48), channels=(8, 16, 16),
                        embedding_dim=16)
    return BaselineModel(sfe, fixed_frames=fixed_frames, seed=seed)


def build_desk_baseline(seed: int = 0, fixed_frames: int = 42) -> BaselineModel:
    sfe = SfeConfig(spatial_shape=(24, 16, 16), channels=(4, 8, 8),
                    embedding_dim=8)
    return BaselineModel(sfe, fixed_frames=fixed_frames, seed=seed)
