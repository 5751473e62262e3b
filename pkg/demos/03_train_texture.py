"""
Training a tiny 1D ResNet on synthetic textures
===============================================

Two classes of byte streams differ only in the period of a repeating texture.
Run with ``python3 demos/03_train_texture.py [epochs]`` (default 8; the full
improved recipe is 50 + 10 epochs and takes about two minutes).
"""

import sys

from binsignal.metrics import macro_scores, partial_auc, pr_curve
from binsignal.model_builder import ModelConfig
from binsignal.synthetic import texture_dataset
from binsignal.training import Recipe, evaluate, train_arrays

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 8

xtr, ytr = texture_dataset(400, 4096, seed=0)
xva, yva = texture_dataset(100, 4096, seed=1)
print("train", xtr.shape, "val", xva.shape)

# one block per stage, 8 channels wide; one GroupNorm group keeps channel energy visible
cfg = ModelConfig(block_type="V2_SE", depths=(1, 1, 1, 1), base_width=8, class_count=2,
                  input_length=4096, norm_groups=1)
recipe = Recipe.improved(epochs=epochs, finetune_epochs=max(1, epochs // 5), warmup_epochs=min(5, epochs))


def show(r):
    print(f"epoch {r.epoch:2d} {r.phase:8s} lr {r.lr:.2e} loss {r.train_loss:.4f} val F1 {r.val_f1:.3f}")


ck = train_arrays(recipe, xtr, ytr, xva, yva, cfg, progress=show)
print("best epoch", ck.meta["best_epoch"], "val F1", ck.meta["best_val_f1"])

# the returned checkpoint is the best one, evaluate it again
cm, probs = evaluate(ck.model(), xva, yva, 2, ck.stats)
print("confusion matrix:\n", cm.counts)
print("macro (f1, precision, recall):", macro_scores(cm))
print("PR AUC over recall >= 0.5:", partial_auc(pr_curve(probs[:, 1], yva)))
