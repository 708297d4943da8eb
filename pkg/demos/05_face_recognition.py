"""Face matching on decrypted images.

Embeds original and decrypted test faces into 128-dimensional vectors and
matches them by Euclidean distance against a threshold. A pair of test
images counts as a positive sample when the ORIGINAL images' embeddings
are within the threshold; the prediction uses the decrypted images at the
same threshold. Sweeping thresholds from 0.50 to 0.60 yields the usual
recall/precision/accuracy/F1 table.

Run demos/02_train_decoder.py first.

Run: python demos/05_face_recognition.py
"""

import os
import sys

import numpy as np

from specklecrypt import ExperimentConfig, load_model
from specklecrypt.harness import evaluate_recognition, prepare_experiment
from specklecrypt.recognizer import MatchConfig, distance, embed

MODEL = "demo_output/decoder/model.spmd"
CONFIG = "demo_output/decoder/config.json"
if not os.path.exists(MODEL):
    sys.exit("run demos/02_train_decoder.py first")

cfg = ExperimentConfig.from_json_file(CONFIG)
model = load_model(MODEL)
data = prepare_experiment(cfg)
decoded = model.decode_batch(data.speckle["test"])
embedder = cfg.recognition.model()

# ------------------------------------------------- per-image match check
# distance between each decrypted face and its own original (the direct
# "is the decryption still the same person" check)
own = [
    distance(embed(embedder, orig), embed(embedder, decr))
    for orig, decr in zip(data.plain["test"], decoded)
]
threshold = MatchConfig().threshold
matches = sum(d <= threshold for d in own)
print(f"decrypted vs own original, threshold {threshold}:")
print(f"  {matches}/{len(own)} match; distances median {np.median(own):.3f}, "
      f"worst {max(own):.3f}")

# ------------------------------------------------------- threshold sweep
rows, _ = evaluate_recognition(
    data.plain["test"], decoded, embedder, cfg.recognition.thresholds
)
fmt = lambda v: "      -" if v is None else f"{100 * v:6.2f}%"
print(f"\n  {'thr':>5}  {'recall':>7}  {'precision':>9}  {'accuracy':>8}  "
      f"{'F1':>7}   (tp/fp/tn/fn)")
for row in rows:
    c = row["counts"]
    print(f"  {row['threshold']:5.2f}  {fmt(row['recall'])}  {fmt(row['precision']):>9}  "
          f"{fmt(row['accuracy']):>8}  {fmt(row['f1'])}   "
          f"({c['tp']}/{c['fp']}/{c['tn']}/{c['fn']})")
print("\nnegative pairs dominate an all-pairs population, so accuracy runs")
print("high while recall tracks how many same-person pairs survive the")
print("encrypt-decrypt roundtrip at each threshold.")
