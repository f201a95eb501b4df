"""Efficient off-policy policy-gradient estimation on finite-horizon MDPs."""

from .env import (Dataset, LQBenchmark, LoggedBandit, Trajectory, analytic_gradient,
                  analytic_value, sample_dataset)
from .estimators import (GradientEstimate, empirical_covariance, grad_eif_nmdp, grad_eoppg,
                         grad_gpomdp, grad_pg_q, grad_reinforce, grad_special, grad_stepwise_is,
                         value_dr)
from .nuisance import NuisanceConfig, fit_nuisances
from .optimizer import AscentConfig, ascend, project, regret
from .policy import BernoulliLogitPolicy, GaussianLinearPolicy

__version__ = "0.1.0"
