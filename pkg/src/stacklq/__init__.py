"""Three-level stochastic LQ leader-follower game solver and verifier."""

from .closedloop import (FeedbackLaw, PathBundle, build_feedback,
                         respond_player1, respond_player12,
                         simulate_equilibrium, simulate_state)
from .errors import (BlowUpError, ConsistencyError, DomainError,
                     ReductionError, SingularCoefficientError,
                     SpecFormatError, StackLQError,
                     UnsupportedPerturbationError)
from .lift import (build_level1, build_level2, build_level2_closedloop,
                   build_level3)
from .model import (GameSpec, TimeGrid, ValidationReport, eval_coeff,
                    load_spec, make_spec, save_spec, solver_times,
                    spec_from_dict, spec_to_dict, validate_spec)
from .montecarlo import (CostEstimate, Direction, PerturbationReport,
                         default_directions, estimate_cost, particle_filter,
                         variational_test)
from .oracle import crosscheck_p, reduce_to_single_player, solve_dp
from .riccati import (MatrixTrajectory, OffsetBundle, RiccatiBundle,
                      integrate_backward, riccati_residuals, solve_game,
                      solve_offsets, solve_p, solve_P12, solve_P123)
from .rng import NoisePath, NoisePlan, noise_paths

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
