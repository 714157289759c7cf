"""foldmix: estimation for finite mixtures whose component parameters are
identifiable only up to a finite group action."""

__version__ = "0.1.0"

from .groups import (FiniteGroup, GroupElement, GroupOrderError, apply,
                     build_group, canonical_rep, parse_group_spec)
from .metrics import (OrbitMultiset, bottleneck_matching, hausdorff_multiset,
                      orbit_cost_matrix, orbit_distance)
from .symtensor import (InvariantBasis, SymTensor, invariant_basis,
                        reynolds_project)
from .molien import MolienSeries, dim_budget, molien_family, molien_generic
from .model import (InvariantStack, MixtureParams, folded_density,
                    gaussian_moment_tensor, phi_jacobian, phi_theta, sample)
from .stacks import (CovEstimate, catoni_mean, covariance, empirical_stack,
                     feature_matrix, mom_mean)
from .gmm import (CollinearAtomsError, FitConfig, FitReport, bias_correct,
                  confidence_radius, fit, greedy_moment_select, j_test,
                  one_step, quotient_fisher_diag, weight_step)
from .selection import (DegenerateSimplexError, ResidualCurve,
                        caratheodory_reduce, dual_certificate, residual_curve,
                        select_k, simplex_margin)
from .experiments import ExperimentSpec, derive_seed, run_experiment
