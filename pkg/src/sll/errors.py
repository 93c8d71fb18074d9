"""Exception hierarchy.

Every error carries a short machine-readable ``code`` that the CLI writes
into its JSON report.
"""


class SLLError(Exception):
    code = "error"


class CoincidentPoints(SLLError):
    code = "coincident_points"


class StepTooLarge(SLLError):
    code = "step_too_large"


class NonZeroMean(SLLError):
    code = "non_zero_mean"


class OnNodalLine(SLLError):
    code = "on_nodal_line"


class AtSingularPoint(SLLError):
    code = "at_singular_point"


class GridTooCoarse(SLLError):
    code = "grid_too_coarse"


class InvalidData(SLLError):
    code = "invalid_data"


class OutOfDomain(SLLError):
    code = "out_of_domain"


class SOutOfBox(SLLError):
    code = "s_out_of_box"


class BallNotInDomain(SLLError):
    code = "ball_not_in_domain"


class NotCritical(SLLError):
    code = "not_critical"


class DomainEscape(SLLError):
    code = "domain_escape"


class TopologyMismatch(SLLError):
    code = "topology_mismatch"


class NoFeasibleSplit(SLLError):
    code = "no_feasible_split"


class SetupInfeasible(SLLError):
    code = "setup_infeasible"


class ScaleTooLarge(SLLError):
    code = "scale_too_large"


class BallsOverlap(SLLError):
    code = "balls_overlap"


class DomainX(SLLError):
    code = "domain_x"


class NormalizationFailed(SLLError):
    code = "normalization_failed"


class ConfigError(SLLError):
    code = "config_error"

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class ParseError(ConfigError):
    code = "parse_error"


class SemanticError(ConfigError):
    code = "semantic_error"
