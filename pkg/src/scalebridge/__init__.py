"""scalebridge: multiscale averaging, fluctuation and transport toolkit."""

__version__ = "0.1.0"

from .errors import (BlowUpError, BudgetExceededError, ConvergenceError,
                     DegenerateVarianceError, InsufficientSampleError,
                     NumericalError, PositivityError, ResolutionError,
                     ScalebridgeError, StepRejectionError, ValidationError)
from .stats import (Chi2Result, FitResult, RngStream, autocorrelation,
                    chi2_test, fit_line, ks_distance,
                    ks_distance_two_sample, ks_p_value, ks_stderr,
                    loglog_slope, normal_cdf)
from .dynamics import (PRESET_NAMES, FastSlowSystem, InitialLaw,
                       ProductState, SlowPath, circle_distance,
                       ensemble_paths, make_preset, make_system,
                       sample_initial, simulate_slow_path, step, wrap)
from .transfer import (GreenKuboResult, SrbDensity, SrbProfile,
                       averaged_drift, build_profile, density_l1,
                       green_kubo_variance, srb_density, trajectory_density,
                       ulam_matrix)
from .averaging import (OBSERVABLES, AveragedSolution, CltComparison,
                        DecayEstimate, FluctuationEnsemble,
                        MetastabilityStats, VarianceCurve, WfComparison,
                        averaging_order, clt_compare, correlation_decay,
                        drift_equilibria, fluctuation_ensemble,
                        residence_statistics, solve_averaged,
                        theoretical_variance, wf_distributional_distance)
from .sde import (FAMILY_IDS, BalanceCheck, CoefficientFamily, EnergyConfig,
                  EquilibriumReport, GapProbeResult, JumpModel, KappaResult,
                  LatticeGraph, LatticeRunResult, ScalarSde,
                  equilibrium_checks, equilibrium_sample, euler_ensemble,
                  euler_maruyama, jump_equilibrium, jump_mode_series,
                  jump_step, kappa_M_estimate, lattice_sde_run, make_family,
                  reversible_drift, spectral_gap_probe)
from .hydro import (DiffusiveResult, HeatReference, VelocityLattice,
                    binned_energy_profile, bond_angle_sigma, closure_check,
                    diffusive_experiment, discrete_laplacian,
                    exchange_noise_step, exchange_run, heat_reference_solve,
                    init_velocities)
from .harness import (EXPERIMENTS, ExperimentConfig, ResultSet, catalog,
                      list_experiments, load_config, run)

__all__ = [name for name in dir() if not name.startswith("_")]
