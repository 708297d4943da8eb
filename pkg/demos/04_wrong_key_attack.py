"""Wrong-physical-key attack.

An attacker who has the trained decoder but not the original scattering
medium encrypts the same faces through a different medium and feeds those
speckles to the decoder. The decryptions come out obscure: the decoder is
specific to the physical key it was trained against.

Run demos/02_train_decoder.py first.

Run: python demos/04_wrong_key_attack.py
Outputs: demo_output/attack/
"""

import os
import sys

from specklecrypt import ExperimentConfig, generate_key, load_model, save_image_pgm
from specklecrypt.harness import prepare_experiment, wrong_key_attack
from specklecrypt.optics import PlainImage, encrypt_batch

MODEL = "demo_output/decoder/model.spmd"
CONFIG = "demo_output/decoder/config.json"
if not os.path.exists(MODEL):
    sys.exit("run demos/02_train_decoder.py first")
OUT = "demo_output/attack"
os.makedirs(OUT, exist_ok=True)

cfg = ExperimentConfig.from_json_file(CONFIG)
model = load_model(MODEL)
data = prepare_experiment(cfg)

key_b = generate_key(cfg.wrong_key_seed, data.key.n_in, data.key.n_out)
print(f"key A (training) fingerprint: {data.key.fingerprint:#018x}")
print(f"key B (attack)   fingerprint: {key_b.fingerprint:#018x}")

report = wrong_key_attack(model, data.key, key_b, data.plain["test"], cfg.speckle_shape)
same = report.condition("same_key")
wrong = report.condition("wrong_key")
print(f"\n  same key : PCC {same.pcc_mean:.4f}, SSIM {same.ssim_mean:.4f}")
print(f"  wrong key: PCC {wrong.pcc_mean:.4f}, SSIM {wrong.ssim_mean:.4f}")
print(f"  separation margin: {same.pcc_mean - wrong.pcc_mean:.2f}")

# previews: original, same-key decryption, wrong-key decryption
wrong_speckles, _ = encrypt_batch(key_b, data.plain["test"][:4], cfg.speckle_shape)
decoded_wrong = model.decode_batch(wrong_speckles)
decoded_same = model.decode_batch(data.speckle["test"][:4])
for i in range(4):
    save_image_pgm(PlainImage(pixels=data.plain["test"][i]), f"{OUT}/face{i}_original.pgm")
    save_image_pgm(PlainImage(pixels=decoded_same[i]), f"{OUT}/face{i}_same_key.pgm")
    save_image_pgm(PlainImage(pixels=decoded_wrong[i]), f"{OUT}/face{i}_wrong_key.pgm")
print(f"\nside-by-side previews in {OUT}/")
print("without the right scattering medium the ciphertexts are useless,")
print("even to the legitimate decoder.")
