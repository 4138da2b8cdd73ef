"""
Object-wise scores on a two-lesion phantom
==========================================

Build a phantom with two lesions, damage the prediction in a few scripted
ways and look at what each score does.
"""
import numpy as np

from flairkit.metrics import classify_case, hd95, object_scores, volume_delta
from flairkit.phantom import Ellipsoid, make_phantom, perturb_prediction

# two equal spheres, 1 mm voxels
lesions = [Ellipsoid.sphere((12.0, 16.0, 12.0), 5.0), Ellipsoid.sphere((30.0, 16.0, 12.0), 5.0)]
_, gt = make_phantom(lesions, (44, 32, 24))
print("gt voxels:", gt.count, " volume (mL):", round(gt.count * gt.voxel_volume_ml, 3))

for mode in ["identity", "dilate:1", "erode:1", "drop:0", "shift:3,0,0", "empty"]:
    pred = gt.with_data(perturb_prediction(gt, mode).data > 0.5)
    cls = classify_case(gt, pred)
    line = f"{mode:12s} {cls.outcome}  voxel dice {cls.voxel_dice:.3f}"
    if cls.outcome == "TP":
        s = object_scores(gt, pred)
        d = volume_delta(gt, pred)
        line += f"  object dice {s.dice:.3f}  recall {s.recall:.3f}  precision {s.precision:.3f}"
        line += f"  HD95 {s.hd95_mm:.2f} mm  {d.direction} {d.delta_ml:.3f} mL"
    print(line)

# dropping one of two equal lesions halves the object dice, while the
# voxel dice only falls to 2/3
pred = gt.with_data(perturb_prediction(gt, "drop:0").data > 0.5)
print("drop:0 object dice", object_scores(gt, pred).dice)

# HD95 is in millimetres: the same voxel shift on a coarser grid is longer
a = np.zeros((16, 16, 16), bool)
a[4, 8, 8] = True
b = np.roll(a, 5, axis=0)
print("single voxel shifted 5 voxels:", hd95(a, b, (1.0, 1.0, 1.0)), "mm at 1 mm,", hd95(a, b, (0.5, 1, 1)), "mm at 0.5 mm")
