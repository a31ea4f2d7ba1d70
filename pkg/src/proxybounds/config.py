"""Numeric tolerances and defaults shared by every module."""

INGEST_TOL = 1e-12
"""Slack allowed when checking that probabilities sum to one on load."""

FEAS_TOL = 1e-9
"""Slack allowed when checking that a point satisfies a constraint system."""

PSI_MIN_DEFAULT = 1e-2
"""Default lower bound on every f(u_i, X=x)."""

COND_CAP = 1e12
"""Largest condition number accepted by exact identification."""

PIVOT_TOL = 1e-11
"""Tableau entries at or below this magnitude are never used as pivots."""

STABLE_PIVOT_TOL = 1e-9
"""Relative magnitude a tableau entry needs to be preferred as a pivot."""

LP_ROW_TOL = 1e-8
LP_BOX_TOL = 1e-10

SIMPLEX_PIVOT_TOL = 1e-10
"""Pivot tolerance for the vertex systems of simplices."""

ROW_COEF_CAP = 1e6
"""Optional relaxation rows with a coefficient above this are left out of
the node LP; their cancellation error would exceed what they contribute."""

PRUNE_MARGIN = 1e-12
GAP_TOL = 1e-9
"""Branch and bound stops once the smallest open bound is this close to the
incumbent."""
LOCAL_SEARCH_MIN_GAIN = 1e-12

DEFAULT_MAX_ITER = 1000
DEFAULT_RESTARTS = 32
