"""Geo-referencing, visual localization and detection positioning for UAV mine surveys.

Library layout:

    geodesy      WGS84 <-> UTM, NED/ENU/body/camera frames
    camera       pinhole intrinsics, rigid poses, projection
    io           sparse models, PLY clouds, sidecars, detections, matches, exports
    retrieval    global descriptors and top-k place retrieval
    pnp          DLT + RANSAC + Gauss-Newton camera pose
    alignment    Umeyama similarity, model geo-registration, trajectory anchoring
    projection   cloud visibility and 3D positioning of detections
    dataset      tiling and augmentation of detector data
    evaluation   localization errors and recalls, AP / F1 / confusion matrix
    synthetic    seeded synthetic missions with exact ground truth
    pipeline     config-driven batch stages behind the ``minegeo`` command
"""
from .errors import (BehindCameraError, ConfigError, DegenerateConfigurationError, GeoDomainError,
                     MinegeoError, ParseError, ProcessingError, ValidationError, ZoneMismatchError)
from .geodesy import EulerNed, GeoPosition, UtmCoord, utm_to_wgs84, wgs84_to_utm
from .camera import GeoPose, Intrinsics, RigidPose
from .alignment import SimilarityTransform, umeyama

__version__ = "0.1.0"
