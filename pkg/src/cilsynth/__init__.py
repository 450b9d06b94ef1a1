"""
Certifiable piecewise-linear classifier controllers.

Trains pairwise linear classifiers that map range scans to control labels and
projects them onto the set of classifiers whose induced piecewise-affine
closed loop admits a polyhedral Lyapunov certificate, checkable by linear
programming.
"""

from .certificate import (CertificateWitness, PolyhedralLyapunov, find_certificate,
                          verify_certificate)
from .classifier import (ClassifierBank, Dataset, LinearClassifier, MeasurementMap,
                         fit_measurement_map, predict)
from .experiment import __version__
from .geometry import Cone, IndexSets, Partition, PolyCell, build_index_sets, sector_cones
from .lpcore import LinearProgram, LpNumericalError, solve
from .model import AffineInclusion, PwaSystem, SingularityError
from .projection import AcsConfig, ParametricProblem, project, sector_problem
from .training import TrainConfig, pgd_train

__all__ = [
    "AcsConfig", "AffineInclusion", "CertificateWitness", "ClassifierBank", "Cone", "Dataset",
    "IndexSets", "LinearClassifier", "LinearProgram", "LpNumericalError", "MeasurementMap",
    "ParametricProblem", "Partition", "PolyCell", "PolyhedralLyapunov", "PwaSystem",
    "SingularityError", "TrainConfig", "__version__", "build_index_sets", "find_certificate",
    "fit_measurement_map", "pgd_train", "predict", "project", "sector_cones", "sector_problem",
    "solve", "verify_certificate",
]
