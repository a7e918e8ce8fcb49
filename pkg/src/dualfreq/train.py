"""Loss, Adam, learning-rate schedule, training loop and evaluation metrics."""

import csv
import dataclasses
import io
import logging
import math
from contextlib import nullcontext
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .data import batch_tensor, batches
from .errors import ConfigError, InvalidLabelError, NumericError
from .nn import sigmoid

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7
CSV_HEADER = ("epoch", "lr", "train_loss", "train_acc", "test_loss", "test_acc")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    batch_size: int = 32
    lr_initial: float = 1e-4
    lr_drop_factor: float = 10.0
    lr_drop_every: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    augment: bool = True
    threshold: float = 0.5
    seed: int = 0
    deterministic: bool = False
    eval_batch_size: int = 256

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr_initial > 0:
            raise ConfigError(f"lr_initial must be > 0, got {self.lr_initial}")
        if self.lr_drop_every < 1 or not self.lr_drop_factor >= 1:
            raise ConfigError("lr_drop_every must be >= 1 and lr_drop_factor >= 1")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return dataclasses.asdict(self)


def lr_for_epoch(epoch, cfg=TrainConfig()):
    """Step schedule: divide by ``lr_drop_factor`` every ``lr_drop_every`` epochs (1-based)."""
    if epoch < 1:
        raise ValueError(f"epochs are 1-based, got {epoch}")
    return cfg.lr_initial / cfg.lr_drop_factor ** ((epoch - 1) // cfg.lr_drop_every)


def _check_labels(y):
    y = np.asarray(y)
    if not np.all((y == 0) | (y == 1)):
        raise InvalidLabelError(f"labels must be 0 or 1, got {np.unique(y)}")
    return y.astype(np.float64)


def bce_loss(p, y):
    """Mean binary cross-entropy; ``p`` is clamped to ``[1e-7, 1 - 1e-7]``."""
    y = _check_labels(y)
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1 - PROB_CLAMP)
    return float(np.mean(-(y * np.log(p) + (1 - y) * np.log1p(-p))))


def bce_grad(p, y):
    """``d mean-BCE / d p`` per element, evaluated at the clamped probability."""
    y = _check_labels(y)
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1 - PROB_CLAMP)
    return (-(y / p) + (1 - y) / (1 - p)) / y.size


class Adam:
    """Adam with bias correction; moments are float32 buffers keyed by parameter name."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads, lr):
        """Update ``params`` in place from ``grads``."""
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in parameter {name!r} at step {self.t + 1}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            m_hat = m / p.dtype.type(bc1)
            v_hat = v / p.dtype.type(bc2)
            p -= p.dtype.type(lr) * m_hat / (np.sqrt(v_hat) + p.dtype.type(self.eps))


@dataclass(frozen=True)
class Metrics:
    """Confusion-matrix summary with class 1 (AI-generated) as positive.

    Ratios with a zero denominator are reported as 0.0 and named in
    ``undefined``.
    """

    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float = 0.5
    loss: float = None
    undefined: tuple = ()
    precision: float = field(init=False)
    recall: float = field(init=False)
    f1: float = field(init=False)
    accuracy: float = field(init=False)

    def __post_init__(self):
        undefined = list(self.undefined)

        def ratio(num, den, name):
            if den == 0:
                undefined.append(name)
                return 0.0
            return num / den

        precision = ratio(self.tp, self.tp + self.fp, "precision")
        recall = ratio(self.tp, self.tp + self.fn, "recall")
        f1 = ratio(2 * precision * recall, precision + recall, "f1")
        accuracy = ratio(self.tp + self.tn, self.total, "accuracy")
        object.__setattr__(self, "precision", precision)
        object.__setattr__(self, "recall", recall)
        object.__setattr__(self, "f1", f1)
        object.__setattr__(self, "accuracy", accuracy)
        object.__setattr__(self, "undefined", tuple(dict.fromkeys(undefined)))

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_predictions(cls, y_true, y_pred, threshold=0.5, loss=None):
        y_true = np.asarray(y_true).astype(bool)
        y_pred = np.asarray(y_pred).astype(bool)
        return cls(
            tp=int(np.sum(y_true & y_pred)),
            fp=int(np.sum(~y_true & y_pred)),
            tn=int(np.sum(~y_true & ~y_pred)),
            fn=int(np.sum(y_true & ~y_pred)),
            threshold=threshold,
            loss=loss,
        )

    def to_dict(self):
        return {
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "accuracy": self.accuracy,
            "threshold": self.threshold,
            "loss": self.loss,
            "undefined": list(self.undefined),
        }


def predict_proba(net, dataset, batch_size=256):
    """Eval-mode probabilities for every sample of ``dataset``, in order."""
    out = []
    for idx in batches(len(dataset), batch_size, shuffle=False):
        x, _ = batch_tensor(dataset, idx)
        out.append(net.forward(x, train=False).astype(np.float64))
    return np.concatenate(out)


def evaluate(net, dataset, threshold=0.5, batch_size=256):
    """Eval-mode metrics (and mean BCE) of ``net`` on ``dataset``."""
    p = predict_proba(net, dataset, batch_size)
    return Metrics.from_predictions(dataset.labels, p >= threshold, threshold, bce_loss(p, dataset.labels))


def _blas_limit(deterministic):
    if not deterministic:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=1)


class Trainer:
    """Runs the training recipe on a :class:`~dualfreq.model.DualBranchNet`.

    Randomness comes from named streams of ``cfg.seed``: ``shuffle`` for
    batch order, ``augment`` for flips and ``dropout`` for dropout masks.
    """

    def __init__(self, net, cfg=TrainConfig()):
        self.net = net
        self.cfg = cfg
        self.optimizer = Adam(cfg.beta1, cfg.beta2, cfg.adam_eps)
        self.shuffle_rng = rngmod.stream(cfg.seed, "shuffle")
        self.augment_rng = rngmod.stream(cfg.seed, "augment")
        net.set_dropout_rng(rngmod.stream(cfg.seed, "dropout"))
        self.history = []

    def train_step(self, x, y, lr):
        """One forward/backward/Adam update; returns the batch's probabilities."""
        net = self.net
        z = net.logits(x, train=True).astype(np.float64)
        p = sigmoid(z).astype(np.float64)
        net.zero_grad()
        # d(mean BCE)/d(logit) = (p - y) / N, taken directly to avoid saturating through the sigmoid
        net.backward_logits((p - y) / len(y))
        self.optimizer.step(net.named_parameters(), net.named_gradients(), lr)
        return p

    def train_epoch(self, dataset, epoch):
        """One pass over ``dataset``; returns ``(mean train loss, train accuracy)``."""
        if len(dataset) == 0:
            raise ConfigError("training dataset is empty")
        lr = lr_for_epoch(epoch, self.cfg)
        loss_sum = 0.0
        correct = 0
        for idx in batches(len(dataset), self.cfg.batch_size, self.shuffle_rng, shuffle=True):
            x, y = batch_tensor(dataset, idx, self.augment_rng if self.cfg.augment else None)
            p = self.train_step(x, y.astype(np.float64), lr)
            loss = bce_loss(p, y)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            loss_sum += loss * len(idx)
            correct += int(np.sum((p >= self.cfg.threshold) == (y == 1)))
        return loss_sum / len(dataset), correct / len(dataset)

    def fit(self, train_set, test_set=None, log_file=None, epochs=None):
        """Train for ``epochs`` (default ``cfg.epochs``); one CSV row per epoch.

        ``log_file`` may be a path or an open text stream. The test set is
        only evaluated, never used for optimisation.
        """
        epochs = self.cfg.epochs if epochs is None else epochs
        if epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {epochs}")
        own = isinstance(log_file, (str, bytes)) or hasattr(log_file, "__fspath__")
        fh = open(log_file, "w", newline="") if own else log_file
        try:
            writer = csv.writer(fh, lineterminator="\n") if fh is not None else None
            if writer:
                writer.writerow(CSV_HEADER)
            with _blas_limit(self.cfg.deterministic):
                start = len(self.history) + 1
                for epoch in range(start, start + epochs):
                    train_loss, train_acc = self.train_epoch(train_set, epoch)
                    test_loss = test_acc = float("nan")
                    if test_set is not None and len(test_set):
                        m = evaluate(self.net, test_set, self.cfg.threshold, self.cfg.eval_batch_size)
                        test_loss, test_acc = m.loss, m.accuracy
                    row = (epoch, lr_for_epoch(epoch, self.cfg), train_loss, train_acc, test_loss, test_acc)
                    self.history.append(dict(zip(CSV_HEADER, row)))
                    log.info("epoch %d lr %.1e train_loss %.4f train_acc %.4f test_loss %.4f test_acc %.4f", *row)
                    if writer:
                        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
                        fh.flush()
        finally:
            if own:
                fh.close()
        return self.history


def history_csv(history):
    """Render a history list as the CSV text written by :meth:`Trainer.fit`."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for row in history:
        w.writerow([repr(row[k]) if isinstance(row[k], float) else row[k] for k in CSV_HEADER])
    return buf.getvalue()
