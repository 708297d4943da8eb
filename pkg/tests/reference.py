"""Independent brute-force reference implementations used as test oracles.

Everything here is written with explicit Python loops and no shared code
with the package, so agreement is meaningful.
"""

import math


def ref_mean(values):
    total = 0.0
    for v in values:
        total += v
    return total / len(values)


def ref_std(values):
    mu = ref_mean(values)
    total = 0.0
    for v in values:
        total += (v - mu) ** 2
    return math.sqrt(total / len(values))


def ref_cov(a, b):
    mu_a = ref_mean(a)
    mu_b = ref_mean(b)
    total = 0.0
    for x, y in zip(a, b):
        total += (x - mu_a) * (y - mu_b)
    return total / len(a)


def ref_pcc(y, yhat):
    y = list(y)
    yhat = list(yhat)
    return ref_cov(y, yhat) / (ref_std(y) * ref_std(yhat))


def ref_mse(y, yhat):
    total = 0.0
    for a, b in zip(y, yhat):
        total += (b - a) ** 2
    return total / len(list(y))


def ref_psnr(y, yhat):
    y = list(y)
    yhat = list(yhat)
    peak = max(max(y), max(yhat))
    return 20.0 * math.log10(peak / math.sqrt(ref_mse(y, yhat)))


def ref_ssim(y, yhat, c1=1e-5, c2=1e-5, c3=1e-5):
    y = list(y)
    yhat = list(yhat)
    mu_y, mu_h = ref_mean(y), ref_mean(yhat)
    sd_y, sd_h = ref_std(y), ref_std(yhat)
    lum = (2 * mu_y * mu_h + c1) / (mu_y**2 + mu_h**2 + c1)
    con = (2 * sd_y * sd_h + c2) / (sd_y**2 + sd_h**2 + c2)
    struct = (ref_cov(y, yhat) + c3) / (sd_y * sd_h + c3)
    return lum * con * struct


def ref_matvec(matrix, vector):
    """Naive complex matrix-vector product, one multiply at a time."""
    rows = len(matrix)
    cols = len(matrix[0])
    out = []
    for r in range(rows):
        acc = complex(0.0, 0.0)
        for c in range(cols):
            acc += matrix[r][c] * vector[c]
        out.append(acc)
    return out


def ref_confusion(original_distances, decrypted_distances, threshold):
    """Exhaustive tally per the positive/negative sample definitions."""
    tp = fp = tn = fn = 0
    for d_orig, d_decr in zip(original_distances, decrypted_distances):
        if d_orig <= threshold:
            if d_decr <= threshold:
                tp += 1
            else:
                fn += 1
        else:
            if d_decr <= threshold:
                fp += 1
            else:
                tn += 1
    return tp, fp, tn, fn


def ref_euclidean(a, b):
    total = 0.0
    for x, y in zip(a, b):
        total += (x - y) ** 2
    return math.sqrt(total)
