"""Independent reference implementations used by several test files."""
import numpy as np


def reference_ssim(x, y, window=11, sigma=1.5, k1=0.01, k2=0.03, rng_=1.0):
    """Straightforward per-window SSIM with explicit loops."""
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    r = np.arange(window) - (window - 1) / 2
    g = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * sigma * sigma))
    g /= g.sum()
    c1, c2 = (k1 * rng_) ** 2, (k2 * rng_) ** 2
    vals = []
    for c in range(x.shape[2]):
        acc = []
        for i in range(x.shape[0] - window + 1):
            for j in range(x.shape[1] - window + 1):
                a = x[i:i + window, j:j + window, c]
                b = y[i:i + window, j:j + window, c]
                ma, mb = (g * a).sum(), (g * b).sum()
                va = (g * (a - ma) ** 2).sum()
                vb = (g * (b - mb) ** 2).sum()
                cov = (g * (a - ma) * (b - mb)).sum()
                acc.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
        vals.append(np.mean(acc))
    return float(np.mean(vals))
