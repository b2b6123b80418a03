"""Quasi-periodic invariant torus solver for second-order mechanical systems.

Computes, continues, and stability-classifies solutions with several base
frequencies by shooting on the Fourier coefficients of the initial
section, with parallel trajectory integration.
"""

from .model import (SecondOrderModel, FrequencyVector, make_duffing,
                    make_cubic_chain, make_vanderpol, build_model,
                    evaluate_rhs, validate_jacobians, ModelError)
from .harmonics import (HarmonicScheme, build_k_matrix, build_sample_grid,
                        build_dft_matrices, rotation_matrix,
                        rotation_derivative, phase_gradient, SchemeError)
from .integrator import (newmark_integrate, integrate_batch,
                         TrajectoryBatchResult, IntegrationError)
from .shooting import (TorusCoefficients, ShootingEvaluation, evaluate,
                       newton_correct, jacobian_fd_check, save_snapshot,
                       load_snapshot, ShootingError)
from .continuation import (ContinuationConfig, Branch, SolutionPoint,
                           TorusSystem, run_branch, tangent_predict,
                           orthogonal_correct, phase_condition_rows,
                           frequency_condition_rows,
                           seed_torus_from_periodic, ContinuationError)
from .stability import (StabilityReport, transition_matrix_field,
                        lyapunov_exponents, floquet_exponents,
                        stability_report, StabilityError)
from .oracle import (TimeSeries, time_integrate, compare_torus_to_timeseries,
                     spectrum, linear_quasiperiodic_response,
                     classical_shooting, OracleError)
from .config import RunConfig, ConfigError

__version__ = "0.1.0"
