"""Solvers and truthful mechanisms for the complex-demand knapsack problem."""

from .core import (Allocation, Choice, ComplexDemand, DemandSet, Entry,
                   Instance, Quadrant, RationalRotation, demand,
                   extended_value, feasible, feasible_total, prec_leq, rotate,
                   welfare)
from .errors import (BudgetExceeded, CapExceeded, CknapsackError,
                     DegenerateSlack, EmptyRange, InfeasibleError, NoExactFit,
                     ParseError, PreconditionViolated)
from .fptas import (RoundingContext, build_context, round_demand,
                    rounded_feasibility_check, solve_bifptas)
from .geometry import (Polygon, build_polygon, candidate_points, contains,
                       grid_levels, project, slack_widths)
from .mdkp import (DpTable, MdkpInstance, MdkpUser, RangeCell, dp_exact_2d,
                   enumerate_range_cells, extract_choices, make_user,
                   optimize_restricted_range, unit_vector)
from .mechanism import (FptasMechanism, MechanismOutcome,
                        RestrictedRangeMechanism, TruthfulPtasMechanism,
                        audit_truthfulness, run_mechanism,
                        social_efficiency_ratio)
from .oracle import brute_force_opt, brute_force_range_opt
from .ptas import (build_truthful_range, construct_witness, partition_small,
                   solve_pgz, solve_ptas, solve_truthful_ptas)

__all__ = [name for name in dir() if not name.startswith("_")]
