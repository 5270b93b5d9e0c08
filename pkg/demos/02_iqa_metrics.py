"""The three quality metrics on a clean face and progressively noisier copies.

    python demos/02_iqa_metrics.py
"""

import numpy as np

from deepfake_disrupt.iqa import assess, metric_metadata
from deepfake_disrupt.synthetic import make_corpus


def main():
    face = make_corpus(2, 1, size=64, seed=0)["id0"][0]
    rng = np.random.default_rng(0)
    print(f"{'noise':>6} {'SSIM':>7} {'FSIM':>7} {'BRISQUE ref':>12} {'BRISQUE test':>13}")
    for sigma in (0.0, 0.01, 0.03, 0.1):
        noisy = np.clip(face + rng.normal(0, sigma, face.shape), 0, 1)
        r = assess(face, noisy)
        print(f"{sigma:>6.2f} {r.ssim:>7.4f} {r.fsim:>7.4f} {r.brisque_ref:>12.2f} {r.brisque_test:>13.2f}")
    print()
    for name, params in metric_metadata().items():
        print(name, params)


if __name__ == "__main__":
    main()
