# Copyright 2026 The PGN Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
# ==============================================================================

"""Builds the bundled desk-scale image set from photographs that ship with
scikit-image, scikit-learn and matplotlib.

Training crops and held-out crops come from disjoint source photographs.
Output is deterministic for a given seed.
"""

import argparse
import os

import matplotlib
import numpy as np
from PIL import Image
from skimage import data as skdata
from sklearn.datasets import load_sample_images

TRAIN_SOURCES = ["astronaut", "coffee", "rocket", "hubble", "motorcycle_left", "motorcycle_right",
                 "china", "flower", "immunohistochemistry", "retina"]
HELDOUT_SOURCES = ["chelsea", "grace_hopper"]


def load_source(name):
  if name in ("astronaut", "coffee", "rocket", "chelsea", "immunohistochemistry", "retina"):
    return getattr(skdata, name)()
  if name == "hubble":
    return skdata.hubble_deep_field()
  if name in ("motorcycle_left", "motorcycle_right"):
    left, right, _ = skdata.stereo_motorcycle()
    return left if name == "motorcycle_left" else right
  if name in ("china", "flower"):
    return load_sample_images().images[0 if name == "china" else 1]
  if name == "grace_hopper":
    path = os.path.join(matplotlib.get_data_path(), "sample_data", "grace_hopper.jpg")
    return np.asarray(Image.open(path).convert("RGB"))
  raise KeyError(name)


def crops(image, count, out_size, rng, min_frac=0.2, max_frac=0.6):
  h, w = image.shape[:2]
  side = min(h, w)
  for _ in range(count):
    s = int(rng.integers(max(out_size, int(min_frac * side)), int(max_frac * side) + 1))
    y = int(rng.integers(0, h - s + 1))
    x = int(rng.integers(0, w - s + 1))
    patch = Image.fromarray(np.ascontiguousarray(image[y:y + s, x:x + s, :3]))
    yield patch.resize((out_size, out_size), Image.LANCZOS)


def main():
  parser = argparse.ArgumentParser(description=__doc__)
  parser.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data", "desk"))
  parser.add_argument("--train-per-source", type=int, default=60)
  parser.add_argument("--train-size", type=int, default=96)
  parser.add_argument("--heldout-per-source", type=int, default=5)
  parser.add_argument("--heldout-size", type=int, default=64)
  parser.add_argument("--seed", type=int, default=20260101)
  args = parser.parse_args()

  rng = np.random.default_rng(args.seed)
  for split, sources, per, size in (("train", TRAIN_SOURCES, args.train_per_source, args.train_size),
                                    ("heldout", HELDOUT_SOURCES, args.heldout_per_source, args.heldout_size)):
    out_dir = os.path.join(args.out, split)
    os.makedirs(out_dir, exist_ok=True)
    n = 0
    for name in sources:
      image = load_source(name)
      for k, patch in enumerate(crops(image, per, size, rng)):
        patch.save(os.path.join(out_dir, f"{name}_{k:03d}.png"), optimize=False)
        n += 1
    print(f"{split}: {n} images in {out_dir}")


if __name__ == "__main__":
  main()
