"""Dual-branch (frequency + spatial) network and its checkpoint format.

Frequency branch, per pyramid block and colour channel::

    DFT -> |.| -> ln(. + eps) -> max pool -> conv -> LReLU

Spatial branch, per pyramid block::

    conv -> LReLU -> max pool

Each branch flattens its blocks in pyramid order, concatenates them and
runs a fully-connected stack (Linear -> PReLU -> Dropout per layer). The
two branch vectors are concatenated and fed to the merged head, whose
last layer is a single logit followed by the logistic function.

One convolution filter exists per block size per branch; all blocks of
that size share it. The two branches share no parameters.
"""

import dataclasses
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .blockdecomp import build_pyramid
from .errors import (
    BadMagicError,
    ConfigError,
    ConfigMismatchError,
    ManifestError,
    ShapeError,
    StateError,
    TruncatedFileError,
)
from .spectral import log_spectrum

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

MAGIC = b"DBNET\x00v1"
_MAGIC_PREFIX = b"DBNET\x00"


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 32
    channels: int = 3
    pyramid_depth: int = 1
    conv_out_channels: int = 16
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    # hidden widths after the flattened conv features; the last is the branch output width
    branch_fc_widths: tuple = (256, 128)
    # widths after the concatenated branch vectors; must end in 1
    merged_fc_widths: tuple = (64, 1)
    prelu_init: float = 0.05
    dropout_rate: float = 0.5
    epsilon_log: float = 1e-6
    # "normalized": DFT of the network input as given; "raw": DFT of the 0..255 pixels
    # recovered by undoing the channel normalisation
    dft_input: str = "normalized"
    norm_mean: tuple = IMAGENET_MEAN
    norm_std: tuple = IMAGENET_STD
    # None, or "frequency"/"spatial" to zero that branch's input (ablation)
    ablate_branch: str = None

    def __post_init__(self):
        for name in ("branch_fc_widths", "merged_fc_widths", "norm_mean", "norm_std"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.image_size % (2 ** self.pyramid_depth):
            raise ConfigError(f"image_size {self.image_size} not divisible by 2**{self.pyramid_depth}")
        if not self.branch_fc_widths:
            raise ConfigError("branch_fc_widths must not be empty")
        if not self.merged_fc_widths or self.merged_fc_widths[-1] != 1:
            raise ConfigError("merged_fc_widths must end with a single output unit")
        if self.dft_input not in ("normalized", "raw"):
            raise ConfigError(f"dft_input must be 'normalized' or 'raw', got {self.dft_input!r}")
        if self.ablate_branch not in (None, "frequency", "spatial"):
            raise ConfigError(f"ablate_branch must be None, 'frequency' or 'spatial'")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if not self.epsilon_log > 0:
            raise ConfigError(f"epsilon_log must be > 0, got {self.epsilon_log}")
        if len(self.norm_mean) != self.channels or len(self.norm_std) != self.channels:
            raise ConfigError("norm_mean/norm_std need one entry per channel")
        for size in self.block_sizes():
            if size % 2:
                raise ConfigError(f"block size {size} must be even for 2x2 pooling")
        self.level_feature_shapes("frequency")
        self.level_feature_shapes("spatial")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def block_sizes(self):
        return [self.image_size // 2 ** d for d in range(self.pyramid_depth + 1)]

    def _conv_out(self, size):
        span = size + 2 * self.padding - self.kernel
        if span < 0:
            raise ConfigError(f"kernel {self.kernel} does not fit a {size}x{size} block")
        return span // self.stride + 1

    def level_feature_shapes(self, branch):
        """``(C, h, w)`` of each conv feature block after the branch's conv/pool stage."""
        shapes = []
        for size in self.block_sizes():
            if branch == "frequency":
                out = self._conv_out(size // 2)
            else:
                out = self._conv_out(size)
                if out % 2:
                    raise ConfigError(f"spatial conv output {out} is odd; cannot pool")
                out //= 2
            shapes.append((self.conv_out_channels, out, out))
        return shapes

    def flatten_width(self, branch):
        return sum(4 ** d * int(np.prod(s)) for d, s in enumerate(self.level_feature_shapes(branch)))

    def branch_width(self):
        return self.branch_fc_widths[-1]


class Branch:
    """Conv stage (one filter per block size) followed by a fully-connected stack."""

    def __init__(self, kind, config, init_rng, dropout_rng, dtype=np.float32):
        if kind not in ("frequency", "spatial"):
            raise ValueError(kind)
        self.kind = kind
        self.config = config
        c = config
        self.convs = [
            nn.Conv2d.glorot(c.channels, c.conv_out_channels, c.kernel, init_rng, c.stride, c.padding, dtype)
            for _ in c.block_sizes()
        ]
        self.pools = [nn.MaxPool2d(2) for _ in c.block_sizes()]
        self.acts = [nn.LReLU() for _ in c.block_sizes()]
        widths = [c.flatten_width(kind), *c.branch_fc_widths]
        self.fcs = [nn.Linear.glorot(a, b, init_rng, dtype) for a, b in zip(widths[:-1], widths[1:])]
        self.prelus = [nn.PReLU(c.prelu_init, dtype) for _ in self.fcs]
        self.dropouts = [nn.Dropout(c.dropout_rate, dropout_rng) for _ in self.fcs]
        self._level_shapes = None

    def layers(self):
        yield from (("conv", i, l) for i, l in enumerate(self.convs))
        yield from (("fc", i, l) for i, l in enumerate(self.fcs))
        yield from (("prelu", i, l) for i, l in enumerate(self.prelus))

    def all_layers(self):
        return [*self.convs, *self.pools, *self.acts, *self.fcs, *self.prelus, *self.dropouts]

    def forward(self, levels, train=False):
        """``levels[d]`` is ``[N, 4**d, C, s, s]``; returns ``[N, branch_width]``."""
        flat = []
        self._level_shapes = []
        for d, x in enumerate(levels):
            n, nb = x.shape[:2]
            x = x.reshape(n * nb, *x.shape[2:])
            if self.kind == "frequency":
                x = self.acts[d].forward(self.convs[d].forward(self.pools[d].forward(x)))
            else:
                x = self.pools[d].forward(self.acts[d].forward(self.convs[d].forward(x)))
            self._level_shapes.append(x.shape)
            flat.append(x.reshape(n, -1))
        h = nn.concat(flat)
        for fc, act, drop in zip(self.fcs, self.prelus, self.dropouts):
            h = drop.forward(act.forward(fc.forward(h)), train)
        return h

    def backward(self, grad):
        if self._level_shapes is None:
            raise StateError("branch backward called before forward")
        for fc, act, drop in reversed(list(zip(self.fcs, self.prelus, self.dropouts))):
            grad = fc.backward(act.backward(drop.backward(grad)))
        n = grad.shape[0]
        widths = [int(np.prod(s)) // n for s in self._level_shapes]
        parts = nn.split_grad(grad, widths)
        for d in reversed(range(len(parts))):
            g = parts[d].reshape(self._level_shapes[d])
            if self.kind == "frequency":
                self.convs[d].backward(self.acts[d].backward(g), need_input_grad=False)
                self.pools[d]._pop()
            else:
                self.convs[d].backward(self.acts[d].backward(self.pools[d].backward(g)), need_input_grad=False)
        self._level_shapes = None


class DualBranchNet:
    """The full two-branch classifier.

    ``forward`` takes normalised images ``[N, C, H, W]`` (or one ``[C, H, W]``)
    and returns probabilities of class 1 (AI-generated).
    """

    def __init__(self, config=None, init_rng=None, dropout_rng=None, dtype=np.float32):
        self.config = config if config is not None else ModelConfig()
        init_rng = init_rng if init_rng is not None else np.random.default_rng(0)
        dropout_rng = dropout_rng if dropout_rng is not None else np.random.default_rng(1)
        self.dtype = np.dtype(dtype)
        self.frequency = Branch("frequency", self.config, init_rng, dropout_rng, dtype)
        self.spatial = Branch("spatial", self.config, init_rng, dropout_rng, dtype)
        widths = [2 * self.config.branch_width(), *self.config.merged_fc_widths]
        self.merged_fcs = [nn.Linear.glorot(a, b, init_rng, dtype) for a, b in zip(widths[:-1], widths[1:])]
        self.merged_prelus = [nn.PReLU(self.config.prelu_init, dtype) for _ in self.merged_fcs[:-1]]
        self.merged_dropouts = [nn.Dropout(self.config.dropout_rate, dropout_rng) for _ in self.merged_fcs[:-1]]
        self.out = nn.Sigmoid()
        self._forwarded = False

    # parameters -----------------------------------------------------------------

    def _param_layers(self):
        for prefix, branch in (("freq", self.frequency), ("spatial", self.spatial)):
            for kind, i, layer in branch.layers():
                yield f"{prefix}.{kind}{i}", layer
        for i, layer in enumerate(self.merged_fcs):
            yield f"merged.fc{i}", layer
        for i, layer in enumerate(self.merged_prelus):
            yield f"merged.prelu{i}", layer

    def named_parameters(self):
        """Ordered ``{name: array}``; arrays are the live parameter buffers."""
        return {f"{prefix}.{k}": v for prefix, layer in self._param_layers() for k, v in layer.params.items()}

    def named_gradients(self):
        return {f"{prefix}.{k}": v for prefix, layer in self._param_layers() for k, v in layer.grads.items()}

    def parameter_count(self):
        return sum(p.size for p in self.named_parameters().values())

    def set_parameters(self, values):
        for prefix, layer in self._param_layers():
            for k in layer.params:
                layer.params[k] = np.array(values[f"{prefix}.{k}"], dtype=self.dtype)
        self.zero_grad()

    def zero_grad(self):
        for _, layer in self._param_layers():
            layer.zero_grad()

    def _all_layers(self):
        return [
            *self.frequency.all_layers(),
            *self.spatial.all_layers(),
            *self.merged_fcs,
            *self.merged_prelus,
            *self.merged_dropouts,
            self.out,
        ]

    def astype(self, dtype):
        """Copy of the network with every parameter cast to ``dtype``."""
        clone = DualBranchNet(self.config, np.random.default_rng(0), np.random.default_rng(1), dtype)
        clone.set_parameters(self.named_parameters())
        return clone

    def set_dropout_rng(self, rng):
        for drop in [*self.frequency.dropouts, *self.spatial.dropouts, *self.merged_dropouts]:
            drop.rng = rng

    # forward / backward -----------------------------------------------------------

    def frequency_features(self, pyramid_levels):
        """Log-magnitude spectra of every block, per channel, cast to the network dtype."""
        c = self.config
        feats = []
        for level in pyramid_levels:
            if c.ablate_branch == "frequency":
                feats.append(np.zeros(level.shape, dtype=self.dtype))
                continue
            x = level.astype(np.float64)
            if c.dft_input == "raw":
                mean = np.asarray(c.norm_mean)[:, None, None]
                std = np.asarray(c.norm_std)[:, None, None]
                x = (x * std + mean) * 255.0
            feats.append(log_spectrum(x, c.epsilon_log).astype(self.dtype))
        return feats

    def _prepare(self, images):
        x = np.asarray(images)
        if x.ndim == 3:
            x = x[None]
        c = self.config
        if x.ndim != 4 or x.shape[1:] != (c.channels, c.image_size, c.image_size):
            raise ShapeError(
                f"expected images [N, {c.channels}, {c.image_size}, {c.image_size}], got {np.shape(images)}"
            )
        return x.astype(self.dtype, copy=False)

    def logits(self, images, train=False):
        x = self._prepare(images)
        for layer in self._all_layers():
            layer.clear()
        levels = build_pyramid(x, self.config.pyramid_depth).levels
        freq_in = self.frequency_features(levels)
        if self.config.ablate_branch == "spatial":
            levels = [np.zeros_like(level) for level in levels]
        h_freq = self.frequency.forward(freq_in, train)
        h_spatial = self.spatial.forward([np.ascontiguousarray(l) for l in levels], train)
        h = nn.concat([h_freq, h_spatial])
        for fc, act, drop in zip(self.merged_fcs[:-1], self.merged_prelus, self.merged_dropouts):
            h = drop.forward(act.forward(fc.forward(h)), train)
        z = self.merged_fcs[-1].forward(h)
        self._forwarded = True
        return z[:, 0]

    def forward(self, images, train=False):
        """Probability of class 1 for each image, shape ``[N]``."""
        z = self.logits(images, train)
        return self.out.forward(z)

    __call__ = forward

    def backward_logits(self, grad_logits):
        """Accumulate parameter gradients from ``dLoss/dlogit`` (shape ``[N]``)."""
        if not self._forwarded:
            raise StateError("backward called without a preceding forward")
        g = np.asarray(grad_logits, dtype=self.dtype).reshape(-1, 1)
        g = self.merged_fcs[-1].backward(g)
        for fc, act, drop in reversed(list(zip(self.merged_fcs[:-1], self.merged_prelus, self.merged_dropouts))):
            g = fc.backward(act.backward(drop.backward(g)))
        w = self.config.branch_width()
        g_freq, g_spatial = nn.split_grad(g, [w, w])
        self.frequency.backward(g_freq)
        self.spatial.backward(g_spatial)
        self._forwarded = False
        return self.named_gradients()

    def backward(self, grad_prob):
        """Accumulate parameter gradients from ``dLoss/dprob`` and return them by name."""
        if not self._forwarded:
            raise StateError("backward called without a preceding forward")
        g = self.out.backward(np.asarray(grad_prob, dtype=self.dtype).reshape(-1))
        return self.backward_logits(g)

    def predict_proba(self, images, batch_size=256):
        """Eval-mode probabilities for a large array of images, in batches."""
        images = np.asarray(images)
        if images.ndim == 3:
            images = images[None]
        out = [self.forward(images[i : i + batch_size]) for i in range(0, len(images), batch_size)]
        for layer in self._all_layers():
            layer.clear()
        self._forwarded = False
        return np.concatenate(out) if out else np.zeros(0, dtype=self.dtype)


# checkpoints ---------------------------------------------------------------------


def save_checkpoint(net, path, config=None):
    """Write ``net`` to ``path``.

    Layout: 8-byte magic ``DBNET\\0v1``; little-endian uint64 header length;
    UTF-8 JSON header ``{"config": ..., "tensors": [{name, shape, offset}]}``;
    raw little-endian float32 values in manifest order.
    """
    config = config if config is not None else net.config
    params = net.named_parameters()
    manifest = []
    offset = 0
    for name, p in params.items():
        manifest.append({"name": name, "shape": list(p.shape), "offset": offset})
        offset += p.size * 4
    header = json.dumps({"config": config.to_dict(), "tensors": manifest}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for p in params.values():
            fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def _compare_configs(stored, expected):
    exp = expected.to_dict()
    for name, value in exp.items():
        if stored.get(name) != value:
            raise ConfigMismatchError(name, stored.get(name), value)


def load_checkpoint(path, expected_config=None):
    """Read a checkpoint written by :func:`save_checkpoint`.

    When ``expected_config`` is given, the stored configuration must equal
    it; the first differing field is named in the error.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC):
        raise TruncatedFileError(f"{path}: file too short for magic bytes")
    if data[: len(MAGIC)] != MAGIC:
        if data[: len(_MAGIC_PREFIX)] == _MAGIC_PREFIX:
            raise BadMagicError(f"{path}: unsupported checkpoint version {data[6:8]!r}")
        raise BadMagicError(f"{path}: not a DBNET checkpoint")
    pos = len(MAGIC)
    if len(data) < pos + 8:
        raise TruncatedFileError(f"{path}: truncated header length")
    (hlen,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    if len(data) < pos + hlen:
        raise TruncatedFileError(f"{path}: truncated header")
    try:
        header = json.loads(data[pos : pos + hlen].decode("utf-8"))
        stored_cfg = header["config"]
        manifest = header["tensors"]
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise ManifestError(f"{path}: malformed header ({exc})") from None
    pos += hlen
    if expected_config is not None:
        _compare_configs(stored_cfg, expected_config)
    try:
        config = ModelConfig.from_dict(stored_cfg)
    except (ConfigError, TypeError) as exc:
        raise ManifestError(f"{path}: invalid stored config ({exc})") from None
    net = DualBranchNet(config)
    params = net.named_parameters()
    names = [t.get("name") for t in manifest]
    if names != list(params):
        raise ManifestError(f"{path}: tensor manifest does not match the architecture")
    total = 0
    values = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        name = entry["name"]
        if shape != params[name].shape:
            raise ManifestError(f"{path}: {name} has shape {shape}, architecture needs {params[name].shape}")
        if entry["offset"] != total:
            raise ManifestError(f"{path}: {name} offset {entry['offset']} is not contiguous")
        count = int(np.prod(shape, dtype=np.int64))
        start = pos + total
        if len(data) < start + count * 4:
            raise TruncatedFileError(f"{path}: data for {name} is truncated")
        values[name] = np.frombuffer(data, dtype="<f4", count=count, offset=start).reshape(shape)
        total += count * 4
    if len(data) != pos + total:
        raise ManifestError(f"{path}: {len(data) - pos - total} unexpected trailing bytes")
    net.set_parameters(values)
    return net
