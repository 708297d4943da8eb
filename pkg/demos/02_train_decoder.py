"""Training the decryption network (the learned digital key).

Builds the desk-scale experiment: a 2,200-image synthetic face corpus,
encrypted under one physical key, with a complex-dense decoder trained
for 30 epochs of SGD (lr 0.15, cosine annealing) on the MSE - PCC loss.
Takes around half a minute on a laptop CPU.

The trained model and config are saved for the later demos.

Run: python demos/02_train_decoder.py
Outputs: demo_output/decoder/
"""

import json
import os

from specklecrypt import ExperimentConfig, save_image_pgm, save_model
from specklecrypt.harness import condition_stats, prepare_experiment, train_decoder
from specklecrypt.optics import PlainImage

OUT = "demo_output/decoder"
os.makedirs(OUT, exist_ok=True)

cfg = ExperimentConfig()  # the desk-scale defaults
print(f"corpus: {cfg.corpus.n_identities} identities x "
      f"{cfg.corpus.samples_per_identity} samples at "
      f"{cfg.corpus.image_size}x{cfg.corpus.image_size}")
print(f"speckles: {cfg.speckle_shape[0]}x{cfg.speckle_shape[1]}, "
      f"split {cfg.split.n_train}/{cfg.split.n_eval}/{cfg.split.n_test}")
print("encrypting corpus...")
data = prepare_experiment(cfg)

print(f"training decoder ({cfg.train.epochs} epochs, lr "
      f"{cfg.train.learning_rate} cosine-annealed, batch {cfg.train.batch_size})...")
model, history = train_decoder(data)
for epoch in (1, 5, 10, 20, 30):
    print(f"  epoch {epoch:2d}: train loss {history.train_loss[epoch - 1]:+.4f}, "
          f"eval PCC {history.eval_pcc[epoch - 1]:.4f}")

decoded = model.decode_batch(data.speckle["test"])
stats = condition_stats("test", decoded, data.plain["test"])
print(f"\nheld-out test set (n={stats.n}): "
      f"PCC {stats.pcc_mean:.4f} +- {stats.pcc_std:.4f}, "
      f"MSE {stats.mse_mean:.4f}, SSIM {stats.ssim_mean:.4f}, "
      f"PSNR {stats.psnr_mean:.2f} dB")

# side-by-side previews of the first few test faces
for i in range(4):
    save_image_pgm(PlainImage(pixels=data.plain["test"][i]), f"{OUT}/test{i}_original.pgm")
    save_image_pgm(PlainImage(pixels=data.speckle["test"][i]), f"{OUT}/test{i}_ciphertext.pgm")
    save_image_pgm(PlainImage(pixels=decoded[i]), f"{OUT}/test{i}_decrypted.pgm")

save_model(model, f"{OUT}/model.spmd")
history.to_csv(f"{OUT}/history.csv")
with open(f"{OUT}/config.json", "w") as fh:
    json.dump(cfg.to_dict(), fh, indent=1)
print(f"\nmodel, history, config, and previews in {OUT}/")
print("(demos 03-05 load this model)")
