"""Feature-based polyaffine initialisation for non-linear image registration.

Centroids of paired segmentation labels give local affine matchings on a
Delaunay neighbourhood graph; these are fused into a dense diffeomorphic
transform with the log-Euclidean polyaffine framework.
"""

__version__ = "0.1.0"

from .affine import (AffineTransform, LogAffine, PointSet, compose, fit_affine_lls,
                     fit_rigid, fit_translation, invert, load_affine, matrix_exp,
                     matrix_log, save_affine)
from .errors import (DataError, DegenerateConfiguration, DegenerateInput, LogUndefined,
                     NumericalError, PolaffiniError)
from .evaluation import dice, jacobian_report
from .features import LabelSelection, extract_centroids, pair_point_sets
from .graph import NeighborhoodGraph, delaunay_graph, neighborhood_center
from .polyaffine import (LocalTransformSet, PolyaffineResult, WeightConfig, build_svf,
                         estimate_local_transforms, estimate_polyaffine, exponentiate,
                         full_transform_at, invert_transform, sigma_heuristic)
from .volume_io import (Grid, LabelVolume, VectorField, Volume, read_volume, resample,
                        voxel_to_world, world_to_voxel, write_volume)
