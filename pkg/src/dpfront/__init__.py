"""Deep dynamic programming for front propagation with obstacles.

Feedback controls are trained backward in time by stochastic gradient on the
dynamic programming residual of a maximum-running-cost control problem; the
zero level set of the resulting value is the propagated front.
"""

__version__ = "0.1.0"

from .estimator import DPPSolver  # noqa: E402
from .problems import make_problem  # noqa: E402
from .schemes import SchemeConfig, TrainedPolicy, evaluate_policy, train  # noqa: E402

__all__ = ["DPPSolver", "SchemeConfig", "TrainedPolicy", "evaluate_policy", "make_problem",
           "train", "__version__"]
