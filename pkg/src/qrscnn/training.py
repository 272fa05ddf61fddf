"""Subject-wise k-fold training with Adam, plateau LR decay and early stopping."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import cnn
from .errors import NotEnoughSubjects, ShapeMismatch, TrainingDiverged
from .preprocess import Segment

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    max_epochs: int = 50
    initial_lr: float = 0.01
    lr_factor: float = 0.1
    lr_patience: int = 5
    early_stop_patience: int = 7
    batch_size: int = 32
    k_folds: int = 5
    seed: int = 0
    min_lr: float = 1e-6

    def validate(self) -> None:
        if self.lr_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patience values must be >= 1")
        if not 0 < self.lr_factor < 1:
            raise ValueError("lr_factor must lie in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("batch_size must be >= 1 and max_epochs >= 0")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class FoldSplit:
    fold_index: int
    train_subjects: frozenset
    val_subjects: frozenset


def make_folds(subjects, k: int = 5, seed: int = 0) -> list[FoldSplit]:
    """Shuffle the distinct subjects, deal them round-robin into ``k`` folds."""
    unique = sorted(set(subjects))
    if len(unique) < k:
        raise NotEnoughSubjects(f"{len(unique)} subjects cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(len(unique))
    shuffled = [unique[i] for i in order]
    everyone = frozenset(unique)
    out = []
    for i in range(k):
        val = frozenset(shuffled[i::k])
        out.append(FoldSplit(i, everyone - val, val))
    return out


# --------------------------------------------------------------------------
# Optimizer and schedules
# --------------------------------------------------------------------------


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **kw) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kw)


def adam_step(params, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("params, grads and optimizer state differ in length")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"parameter {p.shape} vs gradient {g.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without
    a strictly lower validation loss."""

    def __init__(self, lr=0.01, factor=0.1, patience=5, min_lr=1e-6):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best = math.inf
        self.bad_epochs = 0

    def update(self, val_loss: float) -> float:
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.lr


class EarlyStopping:
    def __init__(self, patience=7):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = -1
        self.bad_epochs = 0
        self._epoch = 0

    def check(self, val_loss: float) -> bool:
        """Record one epoch's loss; True means stop now."""
        self._epoch += 1
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = self._epoch
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience

    @property
    def improved(self) -> bool:
        return self.bad_epochs == 0


# --------------------------------------------------------------------------
# Epoch loop
# --------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    stopped_early: bool = False
    best_epoch: int = 0

    def __len__(self):
        return len(self.epochs)

    @property
    def best_val_loss(self) -> float:
        return min((e.val_loss for e in self.epochs), default=math.nan)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for e in self.epochs:
                w.writerow([e.epoch, repr(e.train_loss), repr(e.val_loss), repr(e.lr)])
        return path


def stack_segments(segments):
    """Arrays ``(signals [N, L], masks [N, L], valid_len [N])`` from segments."""
    x = np.stack([s.signal for s in segments])
    y = np.stack([s.mask for s in segments]).astype(np.float64)
    valid = np.asarray([s.valid_len for s in segments], dtype=np.int64)
    return x, y, valid


def dataset_loss(model, x, y, valid, batch_size=512) -> float:
    """Mean per-window cross entropy over a whole segment set."""
    total = 0.0
    for lo in range(0, x.shape[0], batch_size):
        hi = min(lo + batch_size, x.shape[0])
        loss, _ = cnn.softmax_cross_entropy(cnn.forward(model, x[lo:hi]), y[lo:hi], valid[lo:hi])
        total += loss * (hi - lo)
    return total / x.shape[0]


def train(model: cnn.CnnModel, train_segments, val_segments, config: TrainConfig | None = None):
    """Fit ``model`` in place and return ``(best_snapshot, history)``.

    After every optimizer step the parameters are rounded to binary32 so the
    returned snapshot is exactly what :func:`cnn.save_model` stores.
    """
    config = config or TrainConfig()
    config.validate()
    if config.max_epochs == 0:
        return model.copy(), TrainHistory()
    if not train_segments or not val_segments:
        raise ValueError("training and validation segment sets must be non-empty")
    x, y, valid = stack_segments(train_segments)
    xv, yv, validv = stack_segments(val_segments)

    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    opt = AdamState.for_params(params)
    sched = PlateauScheduler(config.initial_lr, config.lr_factor, config.lr_patience, config.min_lr)
    stopper = EarlyStopping(config.early_stop_patience)
    history = TrainHistory()
    best = model.copy()

    n = x.shape[0]
    for epoch in range(1, config.max_epochs + 1):
        lr = sched.lr
        order = rng.permutation(n)
        running = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            logits, cache = cnn.forward(model, x[idx], train=True)
            loss, dlogits = cnn.softmax_cross_entropy(logits, y[idx], valid[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite training loss at epoch {epoch}", epoch=epoch)
            grads = cnn.backward(model, cache, dlogits)
            adam_step(params, [g for pair in grads for g in pair], opt, lr)
            model.round_to_float32()
            running += loss * idx.size
        train_loss = running / n
        val_loss = dataset_loss(model, xv, yv, validv)
        if not math.isfinite(val_loss):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}", epoch=epoch)
        history.epochs.append(EpochRecord(epoch, train_loss, val_loss, lr))
        log.debug("epoch %d train %.5f val %.5f lr %g", epoch, train_loss, val_loss, lr)

        sched.update(val_loss)
        stop = stopper.check(val_loss)
        if stopper.improved:
            best = model.copy()
            history.best_epoch = epoch
        if stop:
            history.stopped_early = True
            break
    return best, history


# --------------------------------------------------------------------------
# Cross-validation
# --------------------------------------------------------------------------


@dataclass
class FoldResult:
    split: FoldSplit
    model: cnn.CnnModel
    history: TrainHistory


def train_folds(segments_by_subject: dict, model_config: cnn.ModelConfig, config: TrainConfig,
                folds=None, progress=None) -> list[FoldResult]:
    """Train one model per subject-wise fold.

    ``segments_by_subject`` maps subject id to that subject's training
    windows. Fold ``i`` initializes with ``model_config.seed + i`` and
    shuffles with ``config.seed + i``.
    """
    if folds is None:
        folds = make_folds(list(segments_by_subject), config.k_folds, config.seed)
    results = []
    for split in folds:
        train_segs = [s for subj in sorted(split.train_subjects) for s in segments_by_subject[subj]]
        val_segs = [s for subj in sorted(split.val_subjects) for s in segments_by_subject[subj]]
        mcfg = cnn.ModelConfig(**{**asdict(model_config), "seed": model_config.seed + split.fold_index})
        tcfg = TrainConfig(**{**asdict(config), "seed": config.seed + split.fold_index})
        try:
            best, history = train(cnn.init_model(mcfg), train_segs, val_segs, tcfg)
        except TrainingDiverged as exc:
            exc.fold = split.fold_index
            raise
        if progress:
            progress(split, history)
        results.append(FoldResult(split, best, history))
    return results


def holdout_split(subjects, val_fraction=0.2, seed=0) -> FoldSplit:
    """Single train/validation subject split (the no-CV shortcut)."""
    unique = sorted(set(subjects))
    if len(unique) < 2:
        raise NotEnoughSubjects("need at least two subjects for a hold-out split")
    order = np.random.default_rng(seed).permutation(len(unique))
    n_val = max(1, int(round(val_fraction * len(unique))))
    val = frozenset(unique[i] for i in order[:n_val])
    return FoldSplit(0, frozenset(unique) - val, val)
