"""Where does a drone camera look, and where is it on the map?

A UAV log gives WGS84 position and NED attitude. This walk-through turns
that into a UTM camera pose and checks it by projecting a ground point.
"""
import numpy as np

from minegeo import geodesy as g
from minegeo.camera import GeoPose, Intrinsics, project_world

# A drone 80 m above a pit near 38.5 N 23.5 E, camera pitched straight down,
# heading east.
pos = g.GeoPosition(38.5, 23.5, 80.0)
att = g.EulerNed(roll=0.0, pitch=-90.0, yaw=90.0)

pose = GeoPose.from_metadata(pos, att)
print(f"UTM zone {pose.zone}{pose.hemisphere}, centre E {pose.pose.center[0]:.2f} N {pose.pose.center[1]:.2f}")

# The optical axis should point down in ENU.
r = g.rotation_enu_from_camera(att)
print("optical axis in ENU:", np.round(r @ [0, 0, 1], 12))
# With the nose pointing east, image "up" (negative y) is east as well.
print("image up in ENU:    ", np.round(r @ [0, -1, 0], 12))

# Heading east, a point 10 m east of nadir appears above the image centre.
k = Intrinsics(700.0, 700.0, 400.0, 300.0, 800, 600)
ground = pose.pose.center + [10.0, 0.0, -80.0]
uv, depth = project_world(k, pose.pose, ground[None])
print(f"ground point 10 m east lands at pixel {uv[0].round(2)}, depth {depth[0]:.1f} m")

# Round trip back to latitude and longitude.
back = g.utm_to_wgs84(g.UtmCoord(*pose.pose.center, pose.zone, pose.hemisphere))
print(f"round trip: {back.latitude:.12f}, {back.longitude:.12f}")
