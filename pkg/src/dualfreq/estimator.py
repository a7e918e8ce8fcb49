"""scikit-learn compatible wrappers around the dual-branch network.

``X`` holds RGB images with pixel values in 0..255, either as
``[N, 3, S, S]`` arrays or flattened ``[N, 3*S*S]`` rows (R plane, then G,
then B, each row-major), the same layout as the binary record format.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import rng as rngmod
from .blockdecomp import build_pyramid
from .data import Dataset, MEAN, STD, normalize
from .errors import ShapeError
from .model import DualBranchNet, ModelConfig, load_checkpoint, save_checkpoint
from .spectral import DEFAULT_EPSILON, log_spectrum
from .train import Trainer, TrainConfig, predict_proba


def check_images(X, image_size=None, channels=3):
    """Validate ``X`` and return it as ``[N, C, S, S]`` (dtype preserved)."""
    X = check_array(X, allow_nd=True, dtype=None, ensure_all_finite=True)
    if X.ndim == 2:
        side = int(round(np.sqrt(X.shape[1] / channels)))
        if channels * side * side != X.shape[1]:
            raise ShapeError(f"cannot interpret {X.shape[1]} features as {channels} square planes")
        X = X.reshape(len(X), channels, side, side)
    if X.ndim != 4 or X.shape[1] != channels or X.shape[2] != X.shape[3]:
        raise ShapeError(f"expected images [N, {channels}, S, S], got {X.shape}")
    if image_size is not None and X.shape[2] != image_size:
        raise ShapeError(f"expected {image_size}x{image_size} images, got {X.shape[2]}x{X.shape[3]}")
    if not np.issubdtype(X.dtype, np.integer):
        X = X.astype(np.float32)
    return X


class DualBranchClassifier(ClassifierMixin, BaseEstimator):
    """Binary real/AI-generated image classifier with frequency and spatial branches.

    Parameters mirror :class:`~dualfreq.model.ModelConfig` and
    :class:`~dualfreq.train.TrainConfig`. The second entry of ``classes_``
    is the positive (AI-generated) class.
    """

    def __init__(
        self,
        pyramid_depth=1,
        conv_out_channels=16,
        kernel=3,
        stride=1,
        padding=1,
        branch_fc_widths=(256, 128),
        merged_fc_widths=(64, 1),
        prelu_init=0.05,
        dropout_rate=0.5,
        epsilon_log=1e-6,
        dft_input="normalized",
        ablate_branch=None,
        epochs=15,
        batch_size=32,
        lr_initial=1e-4,
        lr_drop_factor=10.0,
        lr_drop_every=10,
        augment=True,
        threshold=0.5,
        random_state=0,
        deterministic=False,
        log_file=None,
    ):
        self.pyramid_depth = pyramid_depth
        self.conv_out_channels = conv_out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        self.branch_fc_widths = branch_fc_widths
        self.merged_fc_widths = merged_fc_widths
        self.prelu_init = prelu_init
        self.dropout_rate = dropout_rate
        self.epsilon_log = epsilon_log
        self.dft_input = dft_input
        self.ablate_branch = ablate_branch
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_initial = lr_initial
        self.lr_drop_factor = lr_drop_factor
        self.lr_drop_every = lr_drop_every
        self.augment = augment
        self.threshold = threshold
        self.random_state = random_state
        self.deterministic = deterministic
        self.log_file = log_file

    def model_config(self, image_size=32):
        return ModelConfig(
            image_size=image_size,
            pyramid_depth=self.pyramid_depth,
            conv_out_channels=self.conv_out_channels,
            kernel=self.kernel,
            stride=self.stride,
            padding=self.padding,
            branch_fc_widths=tuple(self.branch_fc_widths),
            merged_fc_widths=tuple(self.merged_fc_widths),
            prelu_init=self.prelu_init,
            dropout_rate=self.dropout_rate,
            epsilon_log=self.epsilon_log,
            dft_input=self.dft_input,
            ablate_branch=self.ablate_branch,
        )

    def train_config(self):
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr_initial=self.lr_initial,
            lr_drop_factor=self.lr_drop_factor,
            lr_drop_every=self.lr_drop_every,
            augment=self.augment,
            threshold=self.threshold,
            seed=self._seed(),
            deterministic=self.deterministic,
        )

    def _seed(self):
        rs = self.random_state
        if rs is None:
            return int(np.random.SeedSequence().generate_state(1)[0])
        if isinstance(rs, np.random.Generator):
            return int(rs.integers(2**31))
        return int(rs)

    def _encode(self, y):
        y = np.asarray(y)
        classes = np.unique(y)
        if len(classes) > 2:
            raise ValueError(f"binary classifier got {len(classes)} classes: {classes}")
        if len(classes) == 1:
            # a single class is taken to be one of {0, 1}
            classes = np.array([0, 1], dtype=y.dtype)
        self.classes_ = classes
        return (y == classes[1]).astype(np.int64)

    def fit(self, X, y, eval_set=None):
        """Train from scratch. ``eval_set=(X_test, y_test)`` adds test columns to ``history_``."""
        X = check_images(X)
        if len(X) != len(np.asarray(y)):
            raise ShapeError(f"{len(X)} images but {len(np.asarray(y))} labels")
        labels = self._encode(y)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        train_cfg = self.train_config()
        config = self.model_config(X.shape[2])
        self.net_ = DualBranchNet(config, rngmod.stream(train_cfg.seed, "init"))
        test = None
        if eval_set is not None:
            Xt = check_images(eval_set[0], X.shape[2])
            yt = (np.asarray(eval_set[1]) == self.classes_[1]).astype(np.int64)
            test = Dataset(Xt, yt, split="test")
        trainer = Trainer(self.net_, train_cfg)
        self.history_ = trainer.fit(Dataset(X, labels, split="train"), test, self.log_file)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "net_")
        X = check_images(X, self.net_.config.image_size)
        p = predict_proba(self.net_, Dataset(X, np.zeros(len(X), dtype=np.int64), split="test"))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        p = self.predict_proba(X)[:, 1]
        return self.classes_[(p >= self.threshold).astype(int)]

    def save(self, path):
        check_is_fitted(self, "net_")
        save_checkpoint(self.net_, path)

    @classmethod
    def from_checkpoint(cls, path, **params):
        """Estimator wrapping a saved network; its config overrides matching parameters."""
        net = load_checkpoint(path)
        c = net.config
        est = cls(**params)
        est.set_params(
            pyramid_depth=c.pyramid_depth,
            conv_out_channels=c.conv_out_channels,
            kernel=c.kernel,
            stride=c.stride,
            padding=c.padding,
            branch_fc_widths=c.branch_fc_widths,
            merged_fc_widths=c.merged_fc_widths,
            prelu_init=c.prelu_init,
            dropout_rate=c.dropout_rate,
            epsilon_log=c.epsilon_log,
            dft_input=c.dft_input,
            ablate_branch=c.ablate_branch,
        )
        est.net_ = net
        est.classes_ = np.array([0, 1])
        est.n_features_in_ = c.channels * c.image_size**2
        return est


class LogSpectrumTransformer(TransformerMixin, BaseEstimator):
    """Flattened per-channel log-magnitude spectra of every pyramid block.

    Stateless; ``fit`` only validates and records the input width. With
    ``normalize_pixels`` the images are channel-normalised before the DFT,
    as in the network's default frequency branch.
    """

    def __init__(self, pyramid_depth=1, epsilon=DEFAULT_EPSILON, normalize_pixels=True):
        self.pyramid_depth = pyramid_depth
        self.epsilon = epsilon
        self.normalize_pixels = normalize_pixels

    def fit(self, X, y=None):
        X = check_images(X)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_images(X).astype(np.float64)
        if self.normalize_pixels:
            X = normalize(X / 255.0, MEAN, STD).astype(np.float64)
        levels = build_pyramid(X, self.pyramid_depth).levels
        return np.concatenate([log_spectrum(l, self.epsilon).reshape(len(X), -1) for l in levels], axis=1)
