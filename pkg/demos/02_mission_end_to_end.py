"""A synthetic survey from start to finish.

We fly a database pass and a query pass over procedural terrain, lose the
match files for some query frames, and still place every frame and every
marker on the map.
"""
import json
import os
import sys
import tempfile

import numpy as np

from minegeo import pipeline

work = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="minegeo_demo_")
mission = os.path.join(work, "mission")
run = os.path.join(work, "run")

# 1. Write the mission. 30% of the query frames get no match file, so PnP
#    cannot register them and the pipeline has to fall back on anchoring.
synth = pipeline.PipelineConfig(out=mission, seed=21, withheld_fraction=0.3)
scene, withheld = pipeline.run_synth(synth)
print(f"mission in {mission}: {len(scene.db)} database views, {len(scene.queries)} queries, "
      f"{len(scene.cloud)} cloud points; withheld {len(withheld)}")

# 2. Localize. The config written by synth points at every input.
cfg = pipeline.PipelineConfig.from_file(os.path.join(mission, "mission.cfg"), {"out": run, "threads": 4})
res = pipeline.run_localize(cfg)
for e in res.trajectory:
    q = next(r for r in res.report.queries if r.name == e.name)
    print(f"  {e.name:18s} {e.status:10s} {q.translation * 100:6.2f} cm  {q.orientation:6.3f} deg")
print(res.report.render())

# 3. Drop each detection on the cloud and compare with where the markers really are.
objs = pipeline.run_project(cfg).objects
print(f"\n{len(objs)} detections positioned")
for m in scene.markers:
    hits = [o for o in objs if o.label == m.label]
    d = min(np.linalg.norm([o.position.easting - m.position[0], o.position.northing - m.position[1],
                            o.position.up - m.position[2]]) for o in hits)
    print(f"  {m.label:11s} closest estimate {d:.2f} m from truth (radius {m.radius} m)")

with open(os.path.join(run, "objects.geojson")) as fh:
    print(f"\nobjects.geojson holds {len(json.load(fh)['features'])} features")
