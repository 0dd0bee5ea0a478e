"""Spectral-truncation laboratory for degenerate-noise gradient formulas."""

__version__ = "0.1.0"

from .errors import (WavebismutError, InvalidParams, DegenerateMode,
                     SingularProjection, InvalidTime, UnsupportedDirection,
                     WindowMismatch, UnsupportedFunctional,
                     NonDifferentiableDrift, GirsanovOverflow,
                     IllConditionedRegression, NonLipschitzGenerator,
                     BudgetExceeded)
from .spectral import (SigmaSpec, ModelParams, HVector, ModeBasis, build_basis,
                       semigroup_blocks, apply_semigroup, apply_generator,
                       propagate_grid, mode_project, hs_norm_squared,
                       check_trace_condition)
from .controls import (VARIANTS, ControlRequest, Control, bump_profile,
                       build_control, direction_from_a, reproducing_residual,
                       control_norm_scaling, noise_cols_grid,
                       export_control_csv)
from .paths import (SimConfig, DriftSpec, PathBundle, simulate_reference,
                    simulate_drifted, girsanov_weight, first_variation,
                    dump_trajectories, load_trajectories, export_moment_csv)
from .gradients import (TestFunctional, GradientReport, skorokhod_integral,
                        estimate_gradient_bismut, estimate_gradient_pathwise,
                        estimate_gradient_fd, append_report_csv)
from .bsde import (GeneratorSpec, TerminalSpec, BsdeSolution, solve_lsmc,
                   semilinear_bismut, z_identification_check,
                   y_gradient_scaling, kolmogorov_residual, export_bsde_csv)
from .config import (EXPERIMENTS, ExperimentConfig, load_config, save_config,
                     config_hash)
