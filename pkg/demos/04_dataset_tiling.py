"""Preparing a detector dataset: count what tiling does before touching pixels.

Each 4K frame becomes four tiles; a seeded 15% of tiles go grayscale and
every tile gets a random quarter turn. A dry run writes only the manifest.
"""
import json
import os
import sys
import tempfile

from minegeo.cli import main

work = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="minegeo_tiles_")
manifest = os.path.join(work, "manifest.json")
images = [{"name": f"frame_{i:05d}.jpg", "width": 3840, "height": 2160,
           "annotations": [{"class": "excavator", "box": [1800, 1000, 2100, 1200]},
                           {"class": "human", "box": [100, 100, 130, 170]}]}
          for i in range(1398)]
with open(manifest, "w") as fh:
    json.dump({"images": images}, fh)

code = main(["tile", "--dry-run", "--seed", "1", "--out", work, "--set", f"manifest={manifest}"])
with open(os.path.join(work, "tiles.json")) as fh:
    doc = json.load(fh)
print("exit code", code)
print("counts:", doc["counts"])
t = doc["tiles"][0]
print("first tile:", {k: t[k] for k in ("name", "window", "turns", "grayscale", "split")})
print("its boxes after the turn:", t["annotations"])
