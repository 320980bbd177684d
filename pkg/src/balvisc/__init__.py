"""balvisc: multi-rate vanishing-viscosity simulation and regime analysis.

Simulates viscously regularized rate-independent ODE systems in which the
equilibrium variable u and the internal variable z carry viscosities
eps^alpha and eps, evaluates the limit dissipation functionals, and
classifies parameterized curves into balanced-viscosity evolution regimes.
"""

from .potentials import (ConfigurationError, NumericalError, R0Spec,
                         QuadraticFormSpec, PotentialSet, unit_potentials,
                         eval_R0, in_subdiff_R0, conj_V, project_K, conj_Wz,
                         prox_z)
from .energy import (EnergyModel, example1, example2, get_model, eval_energy,
                     check_assumptions, equilibrium_map, reduced_I)
from .solver import (RateParams, SolverConfig, Trajectory, step, integrate,
                     energy_balance_residual, apriori_diagnostics,
                     count_jump_clusters, well_preparedness)
from .reparam import (ParameterizedCurve, arclength_reparam, custom_reparam,
                      normalize, sup_distance)
from .mfunctional import (MArgs, MValue, eval_Meps, eval_M0, duality_gap,
                          recovery_tau, gamma_pointwise_check, SnapGates,
                          parameterized_energy_residual)
from .regimes import (ClassifyGates, RegimeSegment, ThetaPair,
                      recover_theta_u, recover_theta_z, classify_point,
                      check_alpha_constraints, segment_curve,
                      verify_relaxation_structure, admissible_labels,
                      EU_RZ, VU_BZ, EU_VZ, VU_VZ, BU_VZ, VU_RZ, STATIONARY,
                      UNCLASSIFIED)
from .kernels import NUMBA_ACTIVE

__version__ = "0.1.0"
