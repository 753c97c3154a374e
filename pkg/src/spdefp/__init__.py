"""Spectral-Galerkin simulation and verification of Fokker-Planck identities
for a stochastic reaction-diffusion equation on (0, 1)."""

__version__ = "0.1.0"

from .spectral import (  # noqa: E402
    GalerkinSpace, NoiseSpec, apply_fractional, build_space, identity_noise,
    trace_fractional, validate_hypotheses,
)
from .drift import (  # noqa: E402
    DriftSpec, drift_catalog, evaluate_drift, lyapunov_V, probe_conditions,
    regularize_pointwise,
)
from .engine import (  # noqa: E402
    Ensemble, InitialLaw, SimConfig, convolution_sup_moment, ou_step, simulate_ensemble,
    simulate_path,
)
from .measures import (  # noqa: E402
    TestDirectionSet, char_functional, measure_distance, moment,
)
from .verify import (  # noqa: E402
    TestFunction, alpha_sweep, apply_L0, ck_check, fp_residual, fp_residuals,
    make_test_function,
)
