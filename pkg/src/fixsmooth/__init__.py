"""Fixed-smoothing inference for the mean of a stationary Gaussian series."""
__version__ = "0.1.0"

from fixsmooth._backend import BACKEND
from fixsmooth.bootstrap import (
    BootstrapOutcome,
    SubsamplingT,
    TaperedCovariance,
    WaldF,
    bootstrap_distribution,
    bootstrap_test,
    resample,
    tapered_cov,
)
from fixsmooth.distributions import MCExpectation, mc_expect
from fixsmooth.exceptions import *  # noqa: F401,F403
from fixsmooth.expansion import (
    ExpansionEstimate,
    aleph,
    exact_coeff_expansion,
    fix_small_leading,
    fixed_b_limit_cdf,
    increasing_K_expansion,
    psi,
    small_b_second_order,
    upsilon,
    upsilon_local,
    xi_variances,
)
from fixsmooth.kernels import EigenSystem, KernelSpec, demean, kernel_constants, nystrom_eigs, parzen_exponent, scale
from fixsmooth.models import ProcessModel, group_mean_covariance, simulate
from fixsmooth.statistics import StatResult, lrv_estimate, projections, subsampling_t, wald_F
