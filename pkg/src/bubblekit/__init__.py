"""bubblekit: star-convex bubble segmentation post-processing.

Geometric primitives for star-convex instance encoding, synthetic
overlapping-bubble scenes with ground truth, hidden-part reconstruction via
a trained radial-distance regressor or constrained ellipse fitting, seed-map
fusion, and the evaluation harness (AP@IoU, size histograms, gas volume
fraction).
"""

__version__ = "0.1.0"

from .geometry import (DEFAULT_RAY_COUNT, LabelMap, PixelScale, StarPolygon,
                       distance_to_background, iou, nms_polygons,
                       object_probability, radial_distances, rasterize)
from .synthgen import (BubbleShape, Scene, SceneConfig, bubble_volume,
                       compose_alpha_scene, compose_rdc_scene, render,
                       sample_shape)
from .rdc import (RdcModel, RdcSample, TrainConfig, correct_polygon,
                  extract_samples, predict, train)
from .ellipse import (Ellipse, EllipseReconstruction, fit_ellipse,
                      free_contour_points, reconstruct_ellipse)
from .fuse import grow_instances, weight_map
from .evaluate import (average_precision, gas_fraction, match_instances,
                       size_histogram)
