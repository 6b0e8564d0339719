"""The five networks: encoder, decoder, classifier, and the two critics.

ResNet blocks follow the BigGAN recipe at a configurable scale. The decoder
is the only network carrying (conditional) batch norm, and the class
condition reaches it exclusively through the cBN embeddings. Spectral
normalization wraps every convolution inside the decoder's upsampling
blocks and nothing else.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .grad import Tensor
from .grad import ops


# ---------------------------------------------------------------------------
# module system
# ---------------------------------------------------------------------------

class Module:
    """Minimal container: tracks params, buffers and children by attribute."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, array: np.ndarray) -> np.ndarray:
        self._buffers[name] = array
        object.__setattr__(self, name, array)
        return array

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {prefix + k: v for k, v in self._params.items()}
        for name, child in self._children.items():
            out.update(child.parameters(prefix + name + "."))
        return out

    def buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + k: v for k, v in self._buffers.items()}
        for name, child in self._children.items():
            out.update(child.buffers(prefix + name + "."))
        return out

    def requires_grad_(self, flag: bool) -> "Module":
        for p in self.parameters().values():
            p.requires_grad = flag
        return self

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._list = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        self._children[str(len(self._list))] = module
        self._list.append(module)

    def __iter__(self):
        return iter(self._list)

    def __len__(self):
        return len(self._list)

    def __getitem__(self, i):
        return self._list[i]


# ---------------------------------------------------------------------------
# init & layers
# ---------------------------------------------------------------------------

def orthogonal(rng: np.random.Generator, shape, gain: float = 1.0,
               dtype=np.float64) -> np.ndarray:
    """Orthogonal init, flattening trailing dims (BigGAN convention)."""
    rows = shape[0]
    cols = int(np.prod(shape[1:]))
    big, small = max(rows, cols), min(rows, cols)
    a = rng.standard_normal((big, small))
    q, r = np.linalg.qr(a)
    q = q * np.where(np.diag(r) >= 0, 1.0, -1.0)
    if rows < cols:
        q = q.T
    return (gain * q[:rows, :cols]).astype(dtype).reshape(shape)


class Dense(Module):
    def __init__(self, rng, n_in: int, n_out: int, bias: bool = True,
                 spectral_norm: bool = False, dtype=np.float64):
        super().__init__()
        self.w = Tensor(orthogonal(rng, (n_in, n_out), dtype=dtype), requires_grad=True)
        if bias:
            self.b = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True)
        self.use_bias = bias
        self.sn = spectral_norm
        if spectral_norm:
            u = rng.standard_normal(n_in).astype(dtype)
            self.register_buffer("u", u / np.linalg.norm(u))

    def forward(self, x: Tensor) -> Tensor:
        w = ops.spectral_normalize(self.w, self.u, update=self.training) \
            if self.sn else self.w
        out = ops.matmul(x, w)
        return out + self.b if self.use_bias else out


class Conv2d(Module):
    """3x3 'same' or 1x1 convolution, stride 1 (resampling is a separate op)."""

    def __init__(self, rng, ci: int, co: int, k: int, bias: bool = True,
                 spectral_norm: bool = False, dtype=np.float64, zero_init: bool = False):
        super().__init__()
        w = np.zeros((co, ci, k, k), dtype=dtype) if zero_init else \
            orthogonal(rng, (co, ci, k, k), dtype=dtype)
        self.w = Tensor(w, requires_grad=True)
        if bias:
            self.b = Tensor(np.zeros(co, dtype=dtype), requires_grad=True)
        self.use_bias = bias
        self.padding = k // 2
        self.sn = spectral_norm
        if spectral_norm:
            u = rng.standard_normal(co).astype(dtype)
            self.register_buffer("u", u / np.linalg.norm(u))

    def forward(self, x: Tensor) -> Tensor:
        w = ops.spectral_normalize(self.w, self.u, update=self.training) \
            if self.sn else self.w
        return ops.conv2d(x, w, self.b if self.use_bias else None,
                          stride=1, padding=self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels: int, dtype=np.float64, momentum: float = 0.1):
        super().__init__()
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))
        self.momentum = momentum

    def _running(self) -> dict:
        return {"mean": self.running_mean, "var": self.running_var}

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(x, self.gamma, self.beta, self._running(),
                              training=self.training, momentum=self.momentum)


class CondBatchNorm2d(Module):
    """Class-conditional affine; gamma rows start at 1, beta rows at 0."""

    def __init__(self, channels: int, n_classes: int, dtype=np.float64,
                 momentum: float = 0.1):
        super().__init__()
        self.gamma_table = Tensor(np.ones((n_classes, channels), dtype=dtype),
                                  requires_grad=True)
        self.beta_table = Tensor(np.zeros((n_classes, channels), dtype=dtype),
                                 requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))
        self.momentum = momentum

    def forward(self, x: Tensor, y: Tensor) -> Tensor:
        running = {"mean": self.running_mean, "var": self.running_var}
        return ops.cond_batch_norm(x, y, self.gamma_table, self.beta_table,
                                   running, training=self.training,
                                   momentum=self.momentum)


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------

class UpBlock(Module):
    """cBN -> ReLU -> up -> conv3x3 -> cBN -> ReLU -> conv3x3, + up/1x1 shortcut.

    Every convolution is spectrally normalized.
    """

    def __init__(self, rng, ci: int, co: int, n_classes: int, dtype=np.float64):
        super().__init__()
        self.bn1 = CondBatchNorm2d(ci, n_classes, dtype)
        self.conv1 = Conv2d(rng, ci, co, 3, spectral_norm=True, dtype=dtype)
        self.bn2 = CondBatchNorm2d(co, n_classes, dtype)
        self.conv2 = Conv2d(rng, co, co, 3, spectral_norm=True, dtype=dtype)
        self.conv_sc = Conv2d(rng, ci, co, 1, spectral_norm=True, dtype=dtype)

    def forward(self, x: Tensor, y: Tensor) -> Tensor:
        h = ops.relu(self.bn1(x, y))
        h = self.conv1(ops.resample(h, "up2"))
        h = ops.relu(self.bn2(h, y))
        h = self.conv2(h)
        sc = self.conv_sc(ops.resample(x, "up2"))
        return h + sc


class DownBlock(Module):
    """ReLU -> conv3x3 -> ReLU -> conv3x3 -> down, + 1x1/down shortcut."""

    def __init__(self, rng, ci: int, co: int, dtype=np.float64):
        super().__init__()
        self.conv1 = Conv2d(rng, ci, co, 3, dtype=dtype)
        self.conv2 = Conv2d(rng, co, co, 3, dtype=dtype)
        self.conv_sc = Conv2d(rng, ci, co, 1, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv1(ops.relu(x))
        h = ops.resample(self.conv2(ops.relu(h)), "down2")
        sc = ops.resample(self.conv_sc(x), "down2")
        return h + sc


class PlainBlock(Module):
    """Final trunk block: two ReLU+conv stages, no shortcut, no resampling."""

    def __init__(self, rng, channels: int, dtype=np.float64):
        super().__init__()
        self.conv1 = Conv2d(rng, channels, channels, 3, dtype=dtype)
        self.conv2 = Conv2d(rng, channels, channels, 3, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv1(ops.relu(x))
        return self.conv2(ops.relu(h))


class NonLocalBlock(Module):
    """Self-attention over spatial positions with a residual add.

    The output projection starts at zero so the block begins as identity.
    """

    def __init__(self, rng, channels: int, dtype=np.float64):
        super().__init__()
        inner = max(channels // 8, 1)
        mid = max(channels // 2, 1)
        self.theta = Conv2d(rng, channels, inner, 1, bias=False, dtype=dtype)
        self.phi = Conv2d(rng, channels, inner, 1, bias=False, dtype=dtype)
        self.g = Conv2d(rng, channels, mid, 1, bias=False, dtype=dtype)
        self.out = Conv2d(rng, mid, channels, 1, bias=False, dtype=dtype,
                          zero_init=True)
        self.inner = inner
        self.mid = mid

    def attention(self, x: Tensor) -> Tensor:
        n, c, h, w = x.data.shape
        l = h * w
        q = ops.reshape(self.theta(x), (n, self.inner, l))
        k = ops.reshape(self.phi(x), (n, self.inner, l))
        logits = ops.bmm(ops.btranspose(q), k)          # (n, l, l)
        return ops.softmax(logits, axis=-1)

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.data.shape
        l = h * w
        attn = self.attention(x)                         # rows sum to 1
        v = ops.reshape(self.g(x), (n, self.mid, l))
        o = ops.bmm(v, ops.btranspose(attn))             # (n, mid, l)
        o = self.out(ops.reshape(o, (n, self.mid, h, w)))
        return x + o


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class NetConfig:
    ch: int = 8
    latent_dim: int = 128
    n_classes: int = 10
    bins: int = 64
    frames: int = 32
    use_nonlocal: bool = False
    mult_max: int = 0          # 0 -> derived as 2**(depth-2)
    dtype: str = "float64"

    def __post_init__(self):
        if self.latent_dim <= 0:
            raise ConfigError("latent_dim must be positive")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be at least 2")
        d = self.depth
        if self.bins != 4 * (1 << d) or self.frames != 2 * (1 << d):
            raise ConfigError(
                f"spec_shape {self.bins}x{self.frames} must be (4,2)*2^depth")

    @property
    def depth(self) -> int:
        d = int(round(np.log2(max(self.bins, 4) / 4)))
        return max(d, 1)

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def seed_shape(self) -> tuple[int, int]:
        return 4, 2

    def _mult_cap(self) -> int:
        return self.mult_max if self.mult_max > 0 else 1 << max(self.depth - 2, 0)

    @property
    def gen_mults(self) -> list[int]:
        m = self._mult_cap()
        return [m] * (self.depth - 1) + [1]

    @property
    def disc_mults(self) -> list[int]:
        m = self._mult_cap()
        return [min(1 << max(i - 1, 0), m) for i in range(self.depth)]


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

class _DownTrunk(Module):
    """Shared shape of encoder and sample-discriminator bodies."""

    def __init__(self, rng, cfg: NetConfig):
        super().__init__()
        dt = cfg.np_dtype
        mults = cfg.disc_mults
        self.blocks = ModuleList()
        prev = 1
        for m in mults:
            self.blocks.append(DownBlock(rng, prev, m * cfg.ch, dtype=dt))
            prev = m * cfg.ch
        self.tail = PlainBlock(rng, prev, dtype=dt)
        self.nonlocal_block = NonLocalBlock(rng, mults[0] * cfg.ch, dtype=dt) \
            if cfg.use_nonlocal else None
        self.out_channels = prev

    def forward(self, x: Tensor) -> Tensor:
        h = x
        for i, block in enumerate(self.blocks):
            h = block(h)
            if i == 0 and self.nonlocal_block is not None:
                h = self.nonlocal_block(h)
        h = ops.relu(self.tail(h))
        return ops.global_sum_pool(h)


class Encoder(Module):
    """Spectrogram -> (z_guided, z_style), two parallel dense heads."""

    def __init__(self, rng, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        self.trunk = _DownTrunk(rng, cfg)
        self.head_guided = Dense(rng, self.trunk.out_channels, cfg.latent_dim,
                                 dtype=cfg.np_dtype)
        self.head_style = Dense(rng, self.trunk.out_channels, cfg.latent_dim,
                                dtype=cfg.np_dtype)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        if x.data.ndim != 4 or x.data.shape[1:] != (1, self.cfg.bins, self.cfg.frames):
            raise DimensionError(
                f"encoder expects (N,1,{self.cfg.bins},{self.cfg.frames}), "
                f"got {x.data.shape}")
        h = self.trunk(x)
        return self.head_guided(h), self.head_style(h)


class Classifier(Module):
    """z_guided -> class logits (softmax applied by `classify`)."""

    def __init__(self, rng, cfg: NetConfig):
        super().__init__()
        dt = cfg.np_dtype
        self.fc1 = Dense(rng, cfg.latent_dim, 128, dtype=dt)
        self.fc2 = Dense(rng, 128, cfg.n_classes, dtype=dt)

    def forward(self, z: Tensor) -> Tensor:
        return self.fc2(ops.relu(self.fc1(z)))

    def classify(self, z: Tensor) -> Tensor:
        return ops.softmax(self.forward(z), axis=-1)


class Decoder(Module):
    """(z_style, one-hot condition) -> spectrogram batch in (-1, 1)."""

    def __init__(self, rng, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        dt = cfg.np_dtype
        mults = cfg.gen_mults
        sh, sw = cfg.seed_shape
        self.seed_channels = mults[0] * cfg.ch
        self.fc = Dense(rng, cfg.latent_dim, sh * sw * self.seed_channels, dtype=dt)
        self.blocks = ModuleList()
        prev = self.seed_channels
        for m in mults:
            self.blocks.append(UpBlock(rng, prev, m * cfg.ch, cfg.n_classes, dtype=dt))
            prev = m * cfg.ch
        self.nonlocal_block = NonLocalBlock(rng, mults[-2] * cfg.ch, dtype=dt) \
            if cfg.use_nonlocal and len(mults) >= 2 else None
        self.bn_out = BatchNorm2d(prev, dtype=dt)
        self.conv_out = Conv2d(rng, prev, 1, 3, dtype=dt)

    def forward(self, z: Tensor, y: Tensor) -> Tensor:
        n = z.data.shape[0]
        sh, sw = self.cfg.seed_shape
        h = ops.reshape(self.fc(z), (n, self.seed_channels, sh, sw))
        last = len(self.blocks) - 1
        for i, block in enumerate(self.blocks):
            if i == last and self.nonlocal_block is not None:
                h = self.nonlocal_block(h)
            h = block(h, y)
        h = ops.relu(self.bn_out(h))
        return ops.tanh(self.conv_out(h))


class SampleDiscriminator(Module):
    """Projection head: dense(h) + <embed(y), h> on the pooled trunk output."""

    def __init__(self, rng, cfg: NetConfig):
        super().__init__()
        dt = cfg.np_dtype
        self.trunk = _DownTrunk(rng, cfg)
        feat = self.trunk.out_channels
        self.head = Dense(rng, feat, 1, dtype=dt)
        self.embed = Tensor(orthogonal(rng, (cfg.n_classes, feat), dtype=dt),
                            requires_grad=True)

    def forward(self, x: Tensor, y: Tensor) -> Tensor:
        if y.data.shape[0] != x.data.shape[0]:
            raise DimensionError("sample/condition batches are misaligned")
        h = self.trunk(x)
        base = self.head(h)                                    # (N, 1)
        proj = ops.tsum(ops.mul(ops.matmul(y, self.embed), h),
                        axis=1, keepdims=True)                 # (N, 1)
        return ops.reshape(base + proj, (x.data.shape[0],))


class LatentDiscriminator(Module):
    """Latent vector -> unbounded realness score."""

    def __init__(self, rng, cfg: NetConfig):
        super().__init__()
        dt = cfg.np_dtype
        self.fc1 = Dense(rng, cfg.latent_dim, 128, dtype=dt)
        self.fc2 = Dense(rng, 128, 128, dtype=dt)
        self.fc3 = Dense(rng, 128, 1, dtype=dt)

    def forward(self, z: Tensor) -> Tensor:
        h = ops.relu(self.fc1(z))
        h = ops.relu(self.fc2(h))
        return ops.reshape(self.fc3(h), (z.data.shape[0],))


@dataclass
class GaaeModels:
    """The five parameter collections, constructed from one init stream."""

    encoder: Encoder
    decoder: Decoder
    classifier: Classifier
    sample_disc: SampleDiscriminator
    latent_disc: LatentDiscriminator
    cfg: NetConfig = field(default=None)

    @classmethod
    def build(cls, rng: np.random.Generator, cfg: NetConfig) -> "GaaeModels":
        return cls(
            encoder=Encoder(rng, cfg),
            decoder=Decoder(rng, cfg),
            classifier=Classifier(rng, cfg),
            sample_disc=SampleDiscriminator(rng, cfg),
            latent_disc=LatentDiscriminator(rng, cfg),
            cfg=cfg,
        )

    def named(self) -> dict[str, Module]:
        return {
            "encoder": self.encoder,
            "decoder": self.decoder,
            "classifier": self.classifier,
            "sample_disc": self.sample_disc,
            "latent_disc": self.latent_disc,
        }

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for name, mod in self.named().items():
            out.update(mod.parameters(name + "."))
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for name, mod in self.named().items():
            out.update(mod.buffers(name + "."))
        return out

    def edc_parameters(self) -> dict[str, Tensor]:
        out = {}
        out.update(self.encoder.parameters("encoder."))
        out.update(self.decoder.parameters("decoder."))
        out.update(self.classifier.parameters("classifier."))
        return out

    def train(self, mode: bool = True) -> "GaaeModels":
        for mod in self.named().values():
            mod.train(mode)
        return self


def one_hot(labels, n_classes: int, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= n_classes:
        raise DimensionError(f"labels out of range for {n_classes} classes")
    out = np.zeros((len(labels), n_classes), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1.0
    return out
