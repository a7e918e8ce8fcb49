"""Finite-difference verification of every hand-written backward pass.

Each check builds a small random instance in float64, reduces the layer
output to a scalar with a fixed random projection, and compares analytic
gradients against central differences (step 1e-4). Inputs are drawn away
from activation kinks and pooling ties so the comparison is meaningful.
"""

import hashlib

import numpy as np

from . import nn
from . import rng as rngmod
from .model import DualBranchNet, ModelConfig
from .train import bce_grad, bce_loss

STEP = 1e-4
# fallback steps for whole-model samples whose default step straddles a kink
KINK_STEPS = (STEP, 1e-5, 1e-6)
THRESHOLD = 1e-3
# gradients smaller than this are compared in absolute rather than relative terms
FLOOR = 1e-6


def relative_error(analytic, numeric, floor=FLOOR):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor), initial=0.0))


def numeric_grad(f, x, indices=None, step=STEP):
    """Central differences of scalar ``f()`` w.r.t. entries of array ``x`` (mutated in place)."""
    flat = x.reshape(-1)
    indices = range(flat.size) if indices is None else indices
    out = []
    for i in indices:
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        out.append((hi - lo) / (2 * step))
    return np.array(out)


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.uniform(margin, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return x


def _layer_check(layer, x, rng, param_names=(), train=None):
    """Max relative error over the input gradient and each named parameter."""
    out = layer.forward(x) if train is None else layer.forward(x, train)
    proj = rng.standard_normal(out.shape)

    def loss():
        layer.clear()
        y = layer.forward(x) if train is None else layer.forward(x, train)
        return float(np.sum(y * proj))

    layer.clear()
    layer.zero_grad()
    loss()
    dx = layer.backward(proj)
    errs = [relative_error(dx.reshape(-1), numeric_grad(loss, x))]
    for name in param_names:
        analytic = np.array(layer.grads[name], copy=True).reshape(-1)
        errs.append(relative_error(analytic, numeric_grad(loss, layer.params[name])))
    return max(errs)


def check_conv2d(rng):
    errs = []
    for stride, pad in ((1, 1), (2, 0), (1, 0)):
        x = rng.standard_normal((2, 3, 7, 7))
        layer = nn.Conv2d(rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4), stride, pad)
        errs.append(_layer_check(layer, x, rng, ("weight", "bias")))
    return max(errs)


def check_maxpool2d(rng):
    # a shuffled grid of well-separated values: no window has a near-tie
    n = 2 * 3 * 8 * 8
    x = (rng.permutation(n) * 0.01).reshape(2, 3, 8, 8)
    return _layer_check(nn.MaxPool2d(2), x, rng)


def check_linear(rng):
    layer = nn.Linear(rng.standard_normal((5, 7)), rng.standard_normal(5))
    return _layer_check(layer, rng.standard_normal((3, 7)), rng, ("weight", "bias"))


def check_lrelu(rng):
    return _layer_check(nn.LReLU(), _away_from_zero(rng, (4, 9)), rng)


def check_prelu(rng):
    layer = nn.PReLU(0.05, dtype=np.float64)
    return _layer_check(layer, _away_from_zero(rng, (4, 9)), rng, ("p",))


def check_sigmoid(rng):
    return _layer_check(nn.Sigmoid(), rng.uniform(-6, 6, size=(4, 9)), rng)


def check_dropout(rng):
    layer = nn.Dropout(0.5, np.random.default_rng(int(rng.integers(2**31))))
    x = rng.standard_normal((4, 9))
    seed = int(rng.integers(2**31))

    def run():
        layer.rng = np.random.default_rng(seed)

    # same mask on every evaluation so the function is fixed
    class _Fixed(nn.Layer):
        def forward(self, x_, train=True):
            run()
            return layer.forward(x_, True)

        def backward(self, g):
            return layer.backward(g)

        def clear(self):
            layer.clear()

    return _layer_check(_Fixed(), x, rng)


def check_bce(rng):
    p = rng.uniform(0.05, 0.95, size=16)
    y = rng.integers(0, 2, size=16)
    analytic = bce_grad(p, y)
    numeric = numeric_grad(lambda: bce_loss(p, y), p)
    return relative_error(analytic, numeric)


def small_model_config():
    return ModelConfig(
        image_size=8,
        pyramid_depth=1,
        conv_out_channels=2,
        branch_fc_widths=(6, 4),
        merged_fc_widths=(5, 1),
    )


def activation_pattern(net):
    """Digest of every kink decision (activation signs, pool argmaxes) of the last forward."""
    h = hashlib.sha256()
    for layer in net._all_layers():
        for entry in layer._cache:
            if isinstance(layer, nn.MaxPool2d):
                h.update(entry[1].tobytes())
            elif isinstance(layer, nn.PReLU):
                h.update(entry[1].tobytes())
            elif isinstance(layer, nn.LReLU):
                h.update(entry.tobytes())
    return h.hexdigest()


def check_model(rng, config=None, samples_per_tensor=3, n_images=2, max_redraws=20):
    """Whole-network check on sampled entries of every parameter tensor (eval mode).

    A sample whose +/- perturbations change the activation pattern straddles
    a kink, where central differences are meaningless. Such a sample is
    retried with smaller steps, then redrawn (at most ``max_redraws`` times
    per tensor).
    """
    config = config if config is not None else small_model_config()
    net = DualBranchNet(config, np.random.default_rng(int(rng.integers(2**31))), dtype=np.float64)
    # random PReLU slopes and biases so every parameter kind carries a non-trivial gradient
    for name, p in net.named_parameters().items():
        if name.endswith(".p"):
            p[...] = rng.uniform(0.05, 0.5)
        elif name.endswith(".bias"):
            p[...] = rng.normal(0, 0.1, size=p.shape)
    s = config.image_size
    images = rng.standard_normal((n_images, config.channels, s, s))
    labels = rng.integers(0, 2, size=n_images)

    def loss_and_pattern():
        return bce_loss(net.forward(images), labels), activation_pattern(net)

    p = net.forward(images)
    base_pattern = activation_pattern(net)
    net.zero_grad()
    grads = {k: v.copy() for k, v in net.backward(bce_grad(p, labels)).items()}
    errs = []
    for name, param in net.named_parameters().items():
        flat = param.reshape(-1)
        want = min(samples_per_tensor, param.size)
        order = rng.permutation(param.size)[: want + max_redraws]
        analytic, numeric = [], []
        for i in order:
            orig = flat[i]
            for step in KINK_STEPS:
                flat[i] = orig + step
                hi, pat_hi = loss_and_pattern()
                flat[i] = orig - step
                lo, pat_lo = loss_and_pattern()
                flat[i] = orig
                if pat_hi == base_pattern and pat_lo == base_pattern:
                    analytic.append(grads[name].reshape(-1)[i])
                    numeric.append((hi - lo) / (2 * step))
                    break
            if len(numeric) == want:
                break
        if not numeric:
            errs.append(float("inf"))
            continue
        errs.append(relative_error(analytic, numeric))
    return max(errs)


def check_model_default(rng):
    """Sampled whole-network check at the default (32x32, 16-channel) architecture."""
    return check_model(rng, ModelConfig(), samples_per_tensor=2, n_images=2)


CHECKS = {
    "conv2d": check_conv2d,
    "maxpool2d": check_maxpool2d,
    "linear": check_linear,
    "lrelu": check_lrelu,
    "prelu": check_prelu,
    "sigmoid": check_sigmoid,
    "dropout": check_dropout,
    "bce": check_bce,
    "model": check_model,
    "model_default": check_model_default,
}


def run_gradcheck(seed=0, checks=None):
    """``{check name: max relative error}`` for every check, in a fixed order."""
    report = {}
    for name in checks or CHECKS:
        report[name] = CHECKS[name](rngmod.stream(seed, "gradcheck"))
    return report


def failures(report, threshold=THRESHOLD):
    return [name for name, err in report.items() if not err <= threshold]
