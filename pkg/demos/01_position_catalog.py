"""Position features 101: the catalog and what a layout looks like as numbers.

Every object layout maps to a fixed-length vector of interpretable scalars
(sizes, locations, pairwise relations, aspect ratios): 19 for one object,
82 for two, 213 for three. Constraints, mining and recommendations all
reference features by their index in this catalog.
"""

import numpy as np

from rbir import geometry
from rbir.geometry import Box, ImageMeta

for arity in (1, 2, 3):
    print(f"arity {arity}: {geometry.catalog(arity).n_features} descriptors")

# A person-ish box left of a horse-ish box in a 640x480 image.
image = ImageMeta("demo", 640, 480)
person = Box(60, 120, 200, 420)
horse = Box(260, 180, 560, 430)
features = geometry.compute_position_features(image, [person, horse])

catalog = geometry.catalog(2)
print("\nA few named features for this layout:")
for name in ("O1.width", "O1.height/O1.width", "O1.left-O2.right",
             "O1.cx-O2.cx", "inter(O1,O2)/O1.area", "O2.right/I.width"):
    idx = catalog.index_of(name)
    print(f"  [{idx:3d}] {name:28s} = {features[idx]:10.3f}")

# The same layout scaled by 2x: px features double, ratios do not move.
scaled = geometry.compute_position_features(
    ImageMeta("demo2x", 1280, 960),
    [Box(120, 240, 400, 840), Box(520, 360, 1120, 860)])
idx_px = catalog.index_of("O1.width")
idx_ratio = catalog.index_of("O1.width/I.width")
print(f"\n2x rescaling: O1.width {features[idx_px]:.1f} -> {scaled[idx_px]:.1f}, "
      f"O1.width/I.width {features[idx_ratio]:.3f} -> {scaled[idx_ratio]:.3f}")
