"""
Preprocessing and augmentation
==============================

Take an anisotropic phantom through resampling, head crop, clipping and
normalisation, map its lesion mask along, then draw a few augmented crops.
"""
import numpy as np

from flairkit.augment import AugmentConfig, augment_sample, make_rng
from flairkit.phantom import Ellipsoid, make_phantom
from flairkit.preprocess import map_mask, preprocess_pipeline, unmap_mask

head = Ellipsoid((60.0, 70.0, 60.0), (50.0, 60.0, 52.0), 400.0)
lesion = Ellipsoid.sphere((75.0, 60.0, 66.0), 9.0, 650.0)
vol, _ = make_phantom([head, lesion], (128, 150, 26), spacing=(0.94, 0.94, 5.0), noise_sigma=8.0, seed=1)
_, mask = make_phantom([lesion], vol.dims, spacing=vol.spacing)
print("input:", vol.dims, vol.spacing)

out, meta = preprocess_pipeline(vol)
print("preprocessed:", out.dims, out.spacing, " crop", meta.crop_start, "->", meta.crop_stop)
nz = out.data[out.data != 0]
print(f"nonzero mean {nz.mean():+.2e}  std {nz.std():.4f}")

fwd = map_mask(mask, meta)
back = unmap_mask(fwd, meta)
print("mask voxels: original", mask.count, " preprocessed", fwd.count, " mapped back", back.count)
print("round-trip agreement:", round(float((back.data == mask.data).mean()), 4))

cfg = AugmentConfig(crop_size=(96, 96, 96), seed=7)
rng = make_rng(cfg.seed)
for k in range(3):
    v, m = augment_sample(out.data, fwd.data, cfg, rng)
    print(f"sample {k}: shape {v.shape}, lesion voxels {int(m.sum())}, range [{v.min():.2f}, {v.max():.2f}]")
