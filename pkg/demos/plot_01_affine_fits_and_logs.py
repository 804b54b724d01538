"""
Affine fits and matrix logarithms
=================================

Closed-form point-set fits, and the principal logarithm that lets affine
maps be averaged.
"""

import numpy as np

from polaffini import (AffineTransform, PointSet, fit_affine_lls, fit_rigid, matrix_exp,
                       matrix_log)
from polaffini.errors import LogUndefined

rng = np.random.default_rng(0)

# a cloud of labelled points and a known affine map
x = PointSet(np.arange(1, 21), rng.normal(scale=40, size=(20, 3)))
truth = AffineTransform([[1.1, 0.1, 0.0], [-0.05, 0.95, 0.02], [0.0, 0.03, 1.02]], [4, -2, 7])
y = x.transformed(truth)

fitted = fit_affine_lls(x, y)
print("affine fit error:", np.abs(fitted.matrix - truth.matrix).max())

# the rigid fit returns the closest rotation, even for a scaled cloud
rigid = fit_rigid(x, PointSet(x.labels, 2.0 * x.points))
print("rigid det:", np.linalg.det(rigid.linear))

# principal log and back
log = matrix_log(truth)
print("log last row:", log.matrix[-1])
print("exp(log) error:", np.abs(matrix_exp(log).matrix - truth.matrix).max())

# halving the log gives a square root of the map
half = matrix_exp(0.5 * matrix_log(truth).matrix)
print("halfway twice == truth:", np.allclose((half @ half).matrix, truth.matrix))

# a half turn has no principal logarithm
try:
    matrix_log(AffineTransform(np.diag([-1.0, -1.0, 1.0]), np.zeros(3)))
except LogUndefined as exc:
    print("half turn:", exc)
