"""
Exceptions raised by score_crl.

Every error carries a stable ``code`` that is written into results.csv rows and
into the error JSON the CLI prints on stderr.
"""


class ScoreCrlError(Exception):
    """Base class for all score_crl errors."""

    code = "score_crl_error"


class SingularQuadraticForm(ScoreCrlError):
    """A quadratic mechanism was evaluated at the origin of its parent subspace."""

    code = "singular_quadratic_form"


class RankDeficientJacobian(ScoreCrlError):
    """The decoder Jacobian lost full column rank."""

    code = "rank_deficient_jacobian"


class DomainViolation(ScoreCrlError):
    """An observation left the open cube (-1, 1)^d where arctanh is defined."""

    code = "domain_violation"


class RankDeficientEncoder(ScoreCrlError):
    """The encoder matrix is not of full row rank."""

    code = "rank_deficient_encoder"


class RankCollapse(ScoreCrlError):
    """The encoder lost row rank during optimization."""

    code = "rank_collapse"


class NoPerfectMatching(ScoreCrlError):
    """No permutation puts nonzero entries on the whole diagonal."""

    code = "no_perfect_matching"


class BudgetExceeded(ScoreCrlError):
    """The permutation search is larger than the configured guard allows."""

    code = "budget_exceeded"


class ConfigError(ScoreCrlError):
    """Invalid configuration document or flag combination."""

    code = "config_error"


class GradientMismatch(ScoreCrlError):
    """The analytic gradient disagrees with finite differences."""

    code = "gradient_mismatch"
