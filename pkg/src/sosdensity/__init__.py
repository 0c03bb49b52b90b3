"""Polynomial-density bounds and worst-case expectations with SOS densities."""
from .ambiguity import (AmbiguityConstraint, AmbiguitySet, LinearFunctional, ambiguity_set, confidence_constraint,
                        conditional_moment_constraint, conditional_probability_constraint, histogram_matching,
                        marginal_matching, mixture_ambiguity, moment_constraint, normalization)
from .lasserre import (DensityCertificate, GenEigPair, assemble_AB, density_from_eigvec, extremal_gen_eig,
                       heuristic_bound, lasserre_bound)
from .moments import (AxisSlab, DomainSpec, Halfspace, MeasureSpec, MomentTable, build_table, cached_table,
                      event_restricted_table, intersect, knapsack_moment, pushforward_update)
from .polybasis import Polynomial, index_set
from .quadrature import InstabilityError, MomentReference, QuadratureReference
from .wcsdp import (ConicProblem, SolveReport, assemble, geneig_crosscheck, separation_oracle, solve,
                    wc_expectation, wc_heuristic, wc_probability)

__version__ = "0.1.0"
