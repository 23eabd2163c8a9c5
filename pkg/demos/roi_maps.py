"""Which brain regions carry which latent?

We wire ROI "A" to the instance features only, ROI "B" to the dense vector
only, and leave a third ROI silent. The weight map should rank A's voxels
high for the h decoder and B's voxels high for the d decoder. The silent
ROI's maximization image should equal the one for an all-zero pattern.

    python demos/roi_maps.py
"""
import numpy as np

from latentdecode.oracle import ToyGenerator
from latentdecode.pipeline import fit_decoders
from latentdecode.roi import roi_maximize, roi_summary, weight_percentile_map, zero_pattern_image
from latentdecode.synthetic import RoiWiring, SyntheticBrainConfig, make_synthetic

gen = ToyGenerator(seed=0)
rois = RoiWiring.parse("A:h:50, B:d:50, SILENT:dead:20")

for seed in range(3):
    data = make_synthetic(gen, SyntheticBrainConfig(rois=tuple(rois), seed=seed))
    dec = fit_decoders(data.dataset.x_train, data.train_latents, gen.spec)
    stats = weight_percentile_map(dec)
    print(f"seed {seed}")
    for s in roi_summary(stats, data.dataset.roi_masks):
        print(f"  {s.name:6s} {s.n_voxels:3d} voxels  mean diff {s.mean_difference:+6.1f} +/- {s.standard_error:.1f}")

masks = {m.name: m for m in data.dataset.roi_masks}
ref = zero_pattern_image(dec, gen)
for name, mask in masks.items():
    gap = np.abs(roi_maximize(dec, gen, mask) - ref).max()
    print(f"{name:6s} max pixel change vs all-zero pattern: {gap:.2e}")
