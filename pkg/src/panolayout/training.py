"""Mean-Teacher training of the boundary predictor, plus supervised and Pi-model modes.

One training step makes three forward passes: the student on the labeled
batch, the student on the unlabeled batch (geometric augmentation only), and
the teacher on the same unlabeled batch with gamma correction on top. The
objective is ``L = L_l + lambda(t) * L_u``; ``L_u`` never back-propagates into
the teacher. In ``pi_model`` mode the "teacher" pass uses the student
parameters and its gradient is kept.

All randomness is derived from ``(seed, stream, step, slot)``, so a run is a
pure function of its configuration and data.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .augment import AugmentationConfig, augment_labeled, augment_unlabeled, item_rng
from .evaluation import evaluate_predictions
from .predictor import ParamVector, Predictor, PredictorConfig

log = logging.getLogger(__name__)

MODES = ("supervised", "mean_teacher", "pi_model")

# channel masks: L1 on the two boundary channels, squared L2 on the corner channel
_L1 = np.array([1.0, 1.0, 0.0])[None, :, None]
_L2 = np.array([0.0, 0.0, 1.0])[None, :, None]

# random streams
_LABELED_AUG, _UNLABELED_AUG, _DROP_L, _DROP_U, _DROP_T, _ORDER_L, _ORDER_U, _INIT = range(1, 9)


class TrainingError(RuntimeError):
    """Raised when the loss becomes non-finite; carries the offending state."""

    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


def normalize_mode(mode):
    mode = str(mode).replace("-", "_").lower()
    if mode not in MODES:
        raise ValueError(f"unknown training mode {mode!r}; expected one of {MODES}")
    return mode


@dataclass
class TrainConfig:
    mode: str = "mean_teacher"
    lambda_max: float = 1.0
    ramp_fraction: float = 0.30
    alpha: float = 0.999
    lr: float = 3e-4
    batch_labeled: int = 4
    batch_unlabeled: int = 4
    epochs: int = 10
    poly_power: float = 0.5
    seed: int = 0
    # iterations per epoch; default ceil(|D_U| / batch_unlabeled), or the
    # labeled set when training supervised without an unlabeled pool
    steps_per_epoch: int | None = None
    eval_every: int = 1
    # average uniformly over the first 1/(1-alpha) steps instead of starting
    # from the random initialization with full weight
    ema_warmup: bool = False
    augment: bool = True
    predictor: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mode = normalize_mode(self.mode)
        if self.lambda_max < 0:
            raise ValueError("lambda_max must be non-negative")
        if not 0 < self.ramp_fraction <= 1:
            raise ValueError("ramp_fraction must be in (0, 1]")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must be in [0, 1]")
        if self.mode == "pi_model":
            self.alpha = 0.0

    def predictor_config(self):
        return PredictorConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in self.predictor.items()})

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class TrainState:
    theta: ParamVector
    teacher: ParamVector | None
    adam: ad.AdamState
    t: int
    t_max: int
    seed: int


@dataclass
class Checkpoint:
    """Parameters chosen by validation, plus the final optimizer state."""

    theta: ParamVector
    teacher: ParamVector | None
    adam: ad.AdamState
    t: int
    t_max: int
    config: TrainConfig
    best_val_iou3d: float = math.nan
    history: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# losses and schedules


def boundary_distance(pred, ref):
    """Batch mean of column-mean L1 (yc, yf) plus column-mean squared L2 (yw)."""
    pred, ref = ad.as_tensor(pred), ad.as_tensor(ref)
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {ref.shape}")
    B, _, W = pred.shape
    d = pred - ref
    per = ad.absolute(d) * _L1.astype(d.data.dtype) + ad.square(d) * _L2.astype(d.data.dtype)
    return ad.total(per) * (1.0 / (B * W))


def supervised_loss(pred, target):
    return boundary_distance(pred, target)


def consistency_loss(student, teacher):
    """Same distance as the supervised loss; a detached teacher contributes no gradient."""
    teacher = ad.as_tensor(teacher)
    if teacher.requires_grad:
        return boundary_distance(student, teacher)
    return boundary_distance(student, ad.Tensor(teacher.data))


def ramp_weight(t, T):
    """Sigmoid-shaped ramp-up ``exp(-5 (1 - t/T)^2)``, held at 1 after ``T``."""
    if T <= 0:
        raise ValueError("ramp length must be positive")
    if t < 0:
        raise ValueError("iteration must be non-negative")
    x = 1.0 - min(t, T) / T
    return math.exp(-5.0 * x * x)


def lr_schedule(lr0, t, t_max, power=0.5):
    """Polynomial annealing ``lr0 (1 - t/t_max)^power``."""
    if t < 0 or t > t_max:
        raise ValueError(f"iteration {t} outside [0, {t_max}]")
    return lr0 * (1.0 - t / t_max) ** power


def ema_update(teacher, student, alpha):
    """``alpha * teacher + (1 - alpha) * student`` elementwise."""
    tv = teacher.data if isinstance(teacher, ParamVector) else np.asarray(teacher)
    sv = student.data if isinstance(student, ParamVector) else np.asarray(student)
    if tv.shape != sv.shape:
        raise ValueError("teacher and student parameter vectors differ in shape")
    out = alpha * tv + (1.0 - alpha) * sv
    return teacher.like(out.astype(tv.dtype)) if isinstance(teacher, ParamVector) else out


def effective_alpha(config, steps_done):
    if config.ema_warmup:
        return min(config.alpha, 1.0 - 1.0 / (steps_done + 1))
    return config.alpha


def iterations(n_unlabeled, batch_unlabeled, epochs):
    return epochs * math.ceil(n_unlabeled / batch_unlabeled)


def ramp_length(config, t_max):
    return config.ramp_fraction * t_max


# ---------------------------------------------------------------------------
# batching


def _cycled(seed, stream, n, start, count):
    """Indices ``start .. start+count`` of an endless sequence of per-cycle permutations."""
    out = []
    pos = start
    while len(out) < count:
        cycle, offset = divmod(pos, n)
        perm = item_rng(seed, stream, cycle).permutation(n)
        take = min(count - len(out), n - offset)
        out.extend(perm[offset:offset + take].tolist())
        pos += take
    return np.array(out, dtype=int)


def labeled_batch(images, targets, config, t):
    idx = _cycled(config.seed, _ORDER_L, len(images), t * config.batch_labeled, config.batch_labeled)
    xs, ys = [], []
    for slot, i in enumerate(idx):
        x, y = images[i], targets[i]
        if config.augment:
            x, y = augment_labeled(x, y, item_rng(config.seed, _LABELED_AUG, t, slot))
        xs.append(x)
        ys.append(y.as_array())
    return np.stack(xs), np.stack(ys)


def unlabeled_batch(images, config, t):
    idx = _cycled(config.seed, _ORDER_U, len(images), t * config.batch_unlabeled, config.batch_unlabeled)
    students, teachers = [], []
    for slot, i in enumerate(idx):
        x = images[i]
        if config.augment:
            s, te = augment_unlabeled(x, item_rng(config.seed, _UNLABELED_AUG, t, slot))
        else:
            s, te = x, x
        students.append(s)
        teachers.append(te)
    return np.stack(students), np.stack(teachers)


# ---------------------------------------------------------------------------
# training


def init_state(predictor, config, t_max):
    theta = predictor.init_params(item_rng(config.seed, _INIT))
    teacher = None if config.mode == "supervised" else theta.copy()
    return TrainState(theta, teacher, ad.AdamState(predictor.size, predictor.dtype), 0, t_max, config.seed)


def train_step(state, predictor, labeled, unlabeled, config):
    """One optimization step; returns the new state and a log record.

    ``labeled`` is ``(x_l, y_l)``; ``unlabeled`` is ``(x_student, x_teacher)``
    or None in supervised mode.
    """
    t = state.t
    x_l, y_l = labeled
    leaf = ad.Tensor(state.theta.data, requires_grad=True)
    stochastic = predictor.config.dropout > 0
    _, y_hat = predictor.graph(leaf, x_l, stochastic, item_rng(config.seed, _DROP_L, t))
    loss_l = supervised_loss(y_hat, y_l.astype(predictor.dtype))
    lam = 0.0
    loss_u = None
    if config.mode != "supervised":
        x_s, x_t = unlabeled
        lam = config.lambda_max * ramp_weight(t, ramp_length(config, state.t_max))
        _, z = predictor.graph(leaf, x_s, stochastic, item_rng(config.seed, _DROP_U, t))
        rng_t = item_rng(config.seed, _DROP_T, t)
        if config.mode == "pi_model":
            _, z_t = predictor.graph(leaf, x_t, stochastic, rng_t)
        else:
            _, z_t = predictor.graph(state.teacher, x_t, stochastic, rng_t, requires_grad=False)
        loss_u = consistency_loss(z, z_t)
        loss = loss_l + loss_u * lam
    else:
        loss = loss_l
    if not np.isfinite(loss.data):
        raise TrainingError(f"non-finite loss at step {t}", state)
    loss.backward()
    grad = leaf.grad
    lr = lr_schedule(config.lr, t, state.t_max, config.poly_power)
    theta_data, adam = ad.adam_step(state.theta.data, grad, state.adam, lr)
    theta = state.theta.like(theta_data.astype(state.theta.data.dtype))
    teacher = state.teacher
    if config.mode == "mean_teacher":
        teacher = ema_update(teacher, theta, effective_alpha(config, t + 1))
    elif config.mode == "pi_model":
        teacher = theta
    record = {
        "t": t,
        "lr": lr,
        "lambda": lam,
        "L_l": float(loss_l.data),
        "L_u": float(loss_u.data) if loss_u is not None else 0.0,
        "L": float(loss.data),
    }
    return TrainState(theta, teacher, adam, t + 1, state.t_max, state.seed), record


def predict_eval(checkpoint, x, predictor=None):
    """Average of student and teacher predictions, dropout off, no test-time augmentation.

    Checkpoints without a teacher (supervised runs) use the student alone.
    """
    predictor = predictor or Predictor(checkpoint.config.predictor_config())
    student = predictor.predict(checkpoint.theta, x)
    if checkpoint.teacher is None:
        return student
    teacher = predictor.predict(checkpoint.teacher, x)
    return 0.5 * (student + teacher)


def train(labeled, unlabeled, config, val=None, predictor=None, log_path=None, progress=None):
    """Run the full procedure and return the checkpoint with the best validation 3D IoU.

    ``labeled`` is ``(images, targets)``; ``unlabeled`` is an image array (ignored
    in supervised mode). ``val`` is ``(images, layouts, annotations)`` or None,
    in which case the final parameters are returned.
    """
    images_l, targets_l = labeled
    if len(images_l) == 0:
        raise ValueError("labeled set is empty")
    if config.mode != "supervised" and (unlabeled is None or len(unlabeled) == 0):
        raise ValueError("semi-supervised modes need a non-empty unlabeled set")
    predictor = predictor or Predictor(config.predictor_config())
    if config.steps_per_epoch is not None:
        per_epoch = int(config.steps_per_epoch)
    elif config.mode == "supervised":
        per_epoch = math.ceil(len(images_l) / config.batch_labeled)
    else:
        per_epoch = math.ceil(len(unlabeled) / config.batch_unlabeled)
    t_max = config.epochs * per_epoch
    state = init_state(predictor, config, t_max)
    history = []
    best = None
    H = predictor.config.height

    def snapshot(val_score):
        teacher = None if state.teacher is None else state.teacher.copy()
        return Checkpoint(state.theta.copy(), teacher, state.adam.copy(), state.t, t_max, config, val_score)

    for epoch in range(config.epochs):
        for _ in range(per_epoch):
            batch_l = labeled_batch(images_l, targets_l, config, state.t)
            batch_u = None if config.mode == "supervised" else unlabeled_batch(unlabeled, config, state.t)
            state, record = train_step(state, predictor, batch_l, batch_u, config)
            record["val_3diou"] = ""
            history.append(record)
        last_epoch = epoch == config.epochs - 1
        if val is not None and ((epoch + 1) % config.eval_every == 0 or last_epoch):
            ckpt = snapshot(math.nan)
            preds = predict_eval(ckpt, val[0], predictor)
            score = evaluate_predictions(preds, val[1], val[2], H)["all"]["iou3d"]
            history[-1]["val_3diou"] = score
            if best is None or score > best.best_val_iou3d:
                best = ckpt
                best.best_val_iou3d = score
            log.info("epoch %d step %d val 3D IoU %.2f", epoch + 1, state.t, score)
        if progress is not None:
            progress(epoch, state, history)
    if best is None:
        best = snapshot(math.nan)
    best.history = history
    if log_path is not None:
        write_log(history, log_path)
    return best


def write_log(history, path):
    cols = ["t", "lr", "lambda", "L_l", "L_u", "val_3diou"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in history:
            w.writerow([r[c] for c in cols])
