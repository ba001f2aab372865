"""Train a small contrastive encoder on the demo corpus.

Loads the dataset written by 01_generate_dataset.py, trains a 3-stage
encoder for a handful of epochs, and reports the nearest-centroid top-1
accuracy on the held-out tail of each session.  The first-epoch loss
should sit near ln(queue_size + 1); with only 6 samples the matching
task saturates almost immediately even while the contrastive loss is
still falling.  Saves demos/out/tiny.ckpt for the service demo.
"""

import math
import sys
from pathlib import Path

from telextile.augment import AugmentConfig
from telextile.checkpoint import save_checkpoint
from telextile.dataset import load_dataset
from telextile.moco import TrainConfig, train
from telextile.nn import EncoderConfig

OUT = Path(__file__).resolve().parent / "out"

if not (OUT / "dataset").exists():
    sys.exit("no demo dataset yet; run 01_generate_dataset.py first")
manifest, frames = load_dataset(OUT / "dataset")

aug = AugmentConfig(crop_size=32)
enc_cfg = EncoderConfig(input_size=32,
                        conv_stages=((8, 3, 2), (16, 3, 2), (32, 3, 2)),
                        embedding_dim=16)
train_cfg = TrainConfig(epochs=6, batch_size=16, queue_size=64,
                        learning_rate=0.05, seed=0)
print(f"encoder: {enc_cfg.stage_sizes()} -> dim {enc_cfg.embedding_dim}, "
      f"{enc_cfg.param_count()} params")
print(f"uniform-softmax plateau would be ln({train_cfg.queue_size}+1) = "
      f"{math.log(train_cfg.queue_size + 1):.4f}")

ckpt, history = train(
    (manifest, frames), aug, enc_cfg, train_cfg, train_count=48,
    progress=lambda e, l, a: print(f"epoch {e}: loss {l:.4f}  top1 {a:.3f}"))

print(f"final top1 {history.final_top1:.3f} in {history.wall_time_s:.1f}s")
save_checkpoint(ckpt, OUT / "tiny.ckpt")
print(f"checkpoint -> {OUT / 'tiny.ckpt'}")
