"""Readers and writers for every external file format."""
from .sparse import (Camera, Image, Point3D, SparseModel, read_sparse_model,
                     write_sparse_model, models_equal, pose_to_qt)
from .ply import PointCloud, read_ply, write_ply
from .records import (SITE_CLASSES, Detection, Match, MatchFile, SidecarRecord,
                      export_geo_objects, read_detections, read_geo_objects_csv,
                      read_matches, read_pose_sidecar, write_detections, write_matches,
                      write_pose_sidecar)
