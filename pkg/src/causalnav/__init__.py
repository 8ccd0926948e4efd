"""De-biased stochastic motion-model estimation and kernel-MDP planning.

The package learns first/second moments of a robot's state-transition model
from confounded observational logs (inverse propensity weighting and doubly
robust estimators with KDE propensity scores) and plans with them through a
diffusion-approximated kernel MDP policy-iteration solver. A cross-terrain
elliptical-track driving simulator is bundled for end-to-end validation.
"""

from causalnav.core import (
    Action,
    Dataset,
    FeatureScaler,
    QueryPoint,
    Sample,
    State,
    StateShift,
    build_action_grid,
    standardized_distance,
    state_shift,
    wrap_angle,
)

__version__ = "0.1.0"
