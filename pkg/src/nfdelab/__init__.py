"""nfdelab: neutral delay compartmental systems under the exponential ordering.

Simulation, monotonicity certification, and empirical validation for closed
compartmental systems governed by nonautonomous neutral functional
differential equations with delay.
"""

from .cones import (ConeParams, cone_contains, cone_infimum, cone_margin,
                    is_quasipositive, matrix_exp, order_leq, order_margin,
                    perturb_in_cone, random_cone_element)
from .histories import History, Trajectory
from .integrate import BACKEND, IntegratorConfig, integrate, integrate_direct
from .measures import DelayMeasure
from .models import CompartmentModel, Driver, Transport
from .neutral import NeutralOperator

__version__ = "0.1.0"

__all__ = [
    "DelayMeasure", "History", "Trajectory", "NeutralOperator",
    "ConeParams", "cone_margin", "cone_contains", "cone_infimum",
    "order_leq", "order_margin", "perturb_in_cone", "random_cone_element",
    "is_quasipositive", "matrix_exp",
    "CompartmentModel", "Transport", "Driver",
    "IntegratorConfig", "integrate", "integrate_direct", "BACKEND",
    "__version__",
]
