"""Training recipes, loss, Adam and the epoch loop.

Two recipes are provided. ``standard`` is plain Adam at a constant learning
rate. ``improved`` adds decoupled weight decay, label smoothing, class
balancing and a warm-up cosine schedule, then fine-tunes at a tenth of the
learning rate with class balancing switched off.
"""
import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .formats import checkpoint_bytes, parse_checkpoint_bytes, read_signal_file
from .metrics import confusion_matrix, macro_scores
from .model_builder import ModelConfig, build_model
from .sigproc import CorpusStats, compute_corpus_stats

__all__ = [
    "Recipe",
    "AdamState",
    "Adam",
    "Checkpoint",
    "EpochRecord",
    "class_weights",
    "smoothed_weighted_cross_entropy",
    "adam_step",
    "lr_at",
    "load_signals",
    "predict_proba",
    "evaluate",
    "train",
    "train_arrays",
    "LOG_COLUMNS",
]

LOG_COLUMNS = ("epoch", "phase", "lr", "train_loss", "val_f1", "val_precision", "val_recall")
BETA1, BETA2, EPS = 0.9, 0.999, 1e-8


@dataclass(frozen=True)
class Recipe:
    kind: str = "standard"
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 100
    weight_decay: float = 0.0
    label_smoothing_alpha: float = 0.0
    class_balance_strength: float = 0.0
    finetune_epochs: int = 0
    finetune_lr_divisor: float = 10.0
    warmup_epochs: int = 0
    seed: int = 0
    # "power": (N / (C n_c)) ** s;  "linear": 1 + s * (N / (C n_c) - 1)
    balance_mode: str = "power"

    def __post_init__(self):
        if self.kind not in ("standard", "improved"):
            raise ValueError(f"kind must be standard or improved, got {self.kind!r}")
        if self.balance_mode not in ("power", "linear"):
            raise ValueError(f"balance_mode must be power or linear, got {self.balance_mode!r}")
        if not 0 <= self.label_smoothing_alpha < 1:
            raise ValueError("label_smoothing_alpha must lie in [0, 1)")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.finetune_lr_divisor <= 0:
            raise ValueError("learning_rate, batch_size and finetune_lr_divisor must be positive")
        if min(self.epochs, self.finetune_epochs, self.warmup_epochs) < 0:
            raise ValueError("epoch counts must be >= 0")

    @classmethod
    def standard(cls, **kw):
        return cls(**{"kind": "standard", "epochs": 100, **kw})

    @classmethod
    def improved(cls, **kw):
        base = dict(kind="improved", epochs=50, weight_decay=0.005, label_smoothing_alpha=0.1,
                    class_balance_strength=0.5, finetune_epochs=10, finetune_lr_divisor=10.0,
                    warmup_epochs=5)
        base.update(kw)
        return cls(**base)

    @property
    def finetune_lr(self):
        return self.learning_rate / self.finetune_lr_divisor

    def header_lines(self):
        return [f"{k}={v}" for k, v in asdict(self).items()]


def class_weights(counts, strength, mode="power"):
    """Per-class loss weights from class counts (or a manifest).

    ``power`` mode gives ``(N / (C n_c)) ** strength``, so 0 is off and 1 is
    full inverse frequency.
    """
    if hasattr(counts, "class_counts"):
        counts = counts.class_counts()
    n = np.asarray(counts, dtype=np.float64)
    if n.ndim != 1 or n.size == 0:
        raise ValueError("counts must be a non-empty 1D sequence")
    if (n < 1).any():
        raise ValueError(f"every class needs at least one sample, counts={n.astype(int).tolist()}")
    inv = n.sum() / (n.size * n)
    if mode == "power":
        return inv ** strength
    if mode == "linear":
        return 1.0 + strength * (inv - 1.0)
    raise ValueError(f"unknown balance mode {mode!r}")


def smoothed_weighted_cross_entropy(logits, labels, alpha=0.0, weights=None):
    """Batch mean of ``w[y] * sum_c t_c * -log softmax_c`` with ``t = (1-alpha) onehot + alpha/C``."""
    logits = ad.tensor(logits)
    b, c = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (b,):
        raise ValueError(f"expected {b} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    if not 0 <= alpha < 1:
        raise ValueError("alpha must lie in [0, 1)")
    w = np.ones(c) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (c,):
        raise ValueError(f"weights must have length {c}")
    target = np.full((b, c), alpha / c)
    target[np.arange(b), labels] += 1.0 - alpha
    coeff = -(target * w[labels][:, None]) / b
    return (logits.log_softmax(axis=1) * coeff.astype(logits.dtype)).sum()


@dataclass
class AdamState:
    params: list
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros(cls, params):
        arrays = [p.data if isinstance(p, ad.Tensor) else p for p in params]
        return cls(list(params), [np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0)


def adam_step(state, grads, lr, weight_decay=0.0):
    """One bias-corrected Adam update followed by decoupled decay ``p *= 1 - lr * wd``.

    Parameters (Tensors or arrays) and moments are updated in place; the
    state is returned for convenience. ``None`` gradients count as zero.
    """
    state.step += 1
    t = state.step
    c1, c2 = 1.0 - BETA1 ** t, 1.0 - BETA2 ** t
    for i, p in enumerate(state.params):
        arr = p.data if isinstance(p, ad.Tensor) else p
        g = grads[i]
        m, v = state.m[i], state.v[i]
        if g is not None:
            m *= BETA1
            m += (1 - BETA1) * g
            v *= BETA2
            v += (1 - BETA2) * (g * g)
        else:
            m *= BETA1
            v *= BETA2
        upd = (m / c1) / (np.sqrt(v / c2) + EPS)
        arr -= (lr * upd).astype(arr.dtype)
        if weight_decay:
            arr *= arr.dtype.type(1.0 - lr * weight_decay)
    return state


class Adam:
    def __init__(self, params, weight_decay=0.0):
        self.params = list(params)
        self.state = AdamState.zeros(self.params)
        self.weight_decay = weight_decay

    def step(self, lr, weight_decay=None):
        wd = self.weight_decay if weight_decay is None else weight_decay
        adam_step(self.state, [p.grad for p in self.params], lr, wd)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def _lr_epochs(recipe, e):
    """Main-phase learning rate after ``e`` (fractional) epochs."""
    peak = recipe.learning_rate
    if recipe.kind == "standard":
        return peak
    total = recipe.epochs
    warm = min(recipe.warmup_epochs, total)
    if warm and e <= warm:
        return peak * e / warm
    if total == warm:
        return peak
    x = min(max((e - warm) / (total - warm), 0.0), 1.0)
    return peak * 0.5 * (1.0 + math.cos(math.pi * x))


def lr_at(recipe, epoch_fraction):
    """Main-phase learning rate at a fraction of the main phase.

    Improved recipe: linear warm-up from 0 over ``warmup_epochs``, then cosine
    decay to 0 at the end of the phase. Standard recipe: constant.
    """
    if not 0 <= epoch_fraction <= 1:
        raise ValueError("epoch_fraction must lie in [0, 1]")
    return _lr_epochs(recipe, epoch_fraction * recipe.epochs)


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    lr: float
    train_loss: float
    val_f1: float
    val_precision: float
    val_recall: float


@dataclass
class Checkpoint:
    config: ModelConfig
    tensors: dict
    meta: dict = field(default_factory=dict)
    log: list = field(default_factory=list)
    recipe: Recipe = None

    @property
    def stats(self):
        if "mean" not in self.meta:
            return None
        return CorpusStats(float(self.meta["mean"]), float(self.meta["std"]))

    def config_text(self):
        text = self.config.to_text()
        for k, v in self.meta.items():
            text += f"meta.{k}={v}\n"
        return text

    def to_bytes(self):
        return checkpoint_bytes(self.config_text(), self.tensors)

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, raw, source="<bytes>"):
        text, tensors = parse_checkpoint_bytes(raw, source)
        meta = {}
        for line in text.splitlines():
            if line.startswith("meta.") and "=" in line:
                k, v = line[5:].split("=", 1)
                meta[k] = v
        return cls(ModelConfig.from_text(text), tensors, meta)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            return cls.from_bytes(f.read(), str(path))

    def model(self):
        m = build_model(self.config, materialize=False)
        return m.load_state_dict(self.tensors)

    def log_csv(self):
        buf = io.StringIO()
        if self.recipe is not None:
            for line in self.recipe.header_lines():
                buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in self.log:
            w.writerow([r.epoch, r.phase, repr(r.lr), repr(r.train_loss),
                        repr(r.val_f1), repr(r.val_precision), repr(r.val_recall)])
        return buf.getvalue()


def load_signals(manifest, length=None):
    """Stack the signal files of a manifest into an ``(N, 1, L)`` float32 array."""
    rows = []
    for p in manifest.paths:
        s = read_signal_file(p)
        if length is not None and len(s) != length:
            raise ValueError(f"{p}: signal length {len(s)} does not match model input_length {length}")
        rows.append(np.asarray(s.samples, dtype=np.float32))
    if not rows:
        raise ValueError("manifest is empty")
    if len({r.size for r in rows}) != 1:
        raise ValueError("signals in a manifest must share one length")
    return np.stack(rows)[:, None, :], manifest.labels


def _standardise(x, stats):
    if stats is None:
        return np.asarray(x, dtype=np.float32)
    return ((np.asarray(x, dtype=np.float64) - stats.mean) / stats.std).astype(np.float32)


def predict_proba(model, x, stats=None, batch_size=64):
    """Softmax class probabilities, computed in batches without a graph."""
    x = _standardise(x, stats)
    dtype = model.parameters()[0].dtype
    out = []
    with ad.no_grad():
        for i in range(0, len(x), batch_size):
            logits = model(ad.Tensor(x[i:i + batch_size].astype(dtype)))
            out.append(logits.softmax(axis=1))
    return np.concatenate(out).astype(np.float64)


def evaluate(model, x, y, class_count, stats=None, batch_size=64):
    probs = predict_proba(model, x, stats, batch_size)
    cm = confusion_matrix(y, probs.argmax(axis=1), class_count)
    return cm, probs


def train_arrays(recipe, x_train, y_train, x_val, y_val, model_config, stats=None, progress=None):
    """Train on in-memory ``(N, 1, L)`` arrays; see :func:`train`."""
    cfg = model_config
    x_train = np.asarray(x_train)
    if x_train.shape[-1] != cfg.input_length or x_val.shape[-1] != cfg.input_length:
        raise ValueError(f"signal length {x_train.shape[-1]}/{x_val.shape[-1]} does not match "
                         f"model input_length {cfg.input_length}")
    y_train = np.asarray(y_train, dtype=np.int64)
    y_val = np.asarray(y_val, dtype=np.int64)
    if stats is None:
        stats = compute_corpus_stats([x_train.ravel()])
    xt = _standardise(x_train, stats)

    model = build_model(cfg, seed=recipe.seed)
    params = model.parameters()
    opt = Adam(params, recipe.weight_decay)
    shuffle = np.random.default_rng([recipe.seed, 1])
    counts = np.bincount(y_train, minlength=cfg.class_count)

    meta = {"mean": repr(stats.mean), "std": repr(stats.std), "seed": recipe.seed}
    best = Checkpoint(cfg, model.state_dict(), dict(meta), [], recipe)
    best_f1 = -1.0
    log = []

    phases = [("main", recipe.epochs, class_weights(counts, recipe.class_balance_strength,
                                                     recipe.balance_mode)),
              ("finetune", recipe.finetune_epochs, np.ones(cfg.class_count))]
    n = len(xt)
    n_batches = max(1, math.ceil(n / recipe.batch_size))
    epoch_no = 0
    for phase, n_epochs, weights in phases:
        for e in range(n_epochs):
            order = shuffle.permutation(n)
            loss_sum = 0.0
            for i in range(n_batches):
                idx = order[i * recipe.batch_size:(i + 1) * recipe.batch_size]
                if phase == "main":
                    lr = _lr_epochs(recipe, e + (i + 1) / n_batches)
                else:
                    lr = recipe.finetune_lr
                opt.zero_grad()
                logits = model(ad.Tensor(xt[idx]))
                loss = smoothed_weighted_cross_entropy(logits, y_train[idx],
                                                       recipe.label_smoothing_alpha, weights)
                loss.backward()
                opt.step(lr)
                loss_sum += float(loss.item()) * len(idx)
            epoch_no += 1
            cm, _ = evaluate(model, x_val, y_val, cfg.class_count, stats, recipe.batch_size)
            f1, p, r = macro_scores(cm)
            rec = EpochRecord(epoch_no, phase, lr, loss_sum / n, f1, p, r)
            log.append(rec)
            if progress is not None:
                progress(rec)
            if f1 > best_f1:
                best_f1 = f1
                best = Checkpoint(cfg, {k: v.copy() for k, v in model.state_dict().items()},
                                  {**meta, "best_epoch": epoch_no, "best_val_f1": repr(f1)}, None, recipe)
    if not log:
        cm, _ = evaluate(model, x_val, y_val, cfg.class_count, stats, recipe.batch_size)
        best.meta.update(best_epoch=0, best_val_f1=repr(macro_scores(cm)[0]))
    best.log = log
    return best


def train(recipe, train_manifest, val_manifest, model_config, progress=None):
    """Train a model and return the checkpoint with the best validation macro-F1.

    Signals are z-normalised with the mean and std of the training set, which
    are stored in the checkpoint. Runs are deterministic given ``recipe.seed``.
    """
    if len(train_manifest) == 0 or len(val_manifest) == 0:
        raise ValueError("train and validation manifests must be non-empty")
    x_train, y_train = load_signals(train_manifest, model_config.input_length)
    x_val, y_val = load_signals(val_manifest, model_config.input_length)
    classes = max(train_manifest.class_count, val_manifest.class_count)
    if classes > model_config.class_count:
        raise ValueError(f"manifests have {classes} classes, model has {model_config.class_count}")
    stats = compute_corpus_stats([x_train.ravel()])
    return train_arrays(recipe, x_train, y_train, x_val, y_val, model_config, stats, progress)
