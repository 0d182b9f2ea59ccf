"""Extrinsic calibration of spinning LiDAR-motor rigs from plane thickness.

The main entry points are :func:`spincal.optimizer.calibrate` and the
``spincal`` command-line tool. Synthetic data comes from :mod:`spincal.sim`.
"""

__version__ = "0.1.0"

from .dh import CalibrationVector, DhParameterSet, MountKind, RigidTransform  # noqa: E402
from .optimizer import CalibrationProblem, CalibrationResult, calibrate  # noqa: E402

__all__ = ["CalibrationVector", "DhParameterSet", "MountKind", "RigidTransform",
           "CalibrationProblem", "CalibrationResult", "calibrate", "__version__"]
