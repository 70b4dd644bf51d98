"""Exception types raised across the toolkit."""


class ElastoDNError(Exception):
    """Base class for all toolkit errors."""


class AsymmetricInput(ElastoDNError, ValueError):
    pass


class NotStronglyConvex(ElastoDNError, ValueError):
    pass


class ZeroDirection(ElastoDNError, ValueError):
    pass


class NotARotation(ElastoDNError, ValueError):
    pass


class NotUnit(ElastoDNError, ValueError):
    pass


class SingularS2(ElastoDNError, ArithmeticError):
    pass


class ZeroPoint(ElastoDNError, ValueError):
    pass


class EmptyPatch(ElastoDNError, ValueError):
    pass


class FlatPatch(ElastoDNError, ValueError):
    """The patch normal image does not contain a nontrivial arc."""


class EstimatorDiverged(ElastoDNError, ArithmeticError):
    pass


class RankDeficient(ElastoDNError, ArithmeticError):
    pass


class NotConverged(ElastoDNError, ArithmeticError):
    pass


class InvertedElement(ElastoDNError, ValueError):
    pass


class SolverFailure(ElastoDNError, ArithmeticError):
    pass


class MeshError(ElastoDNError, ValueError):
    pass


class ApproximationStalled(ElastoDNError, ArithmeticError):
    """Runge approximation saturated above the requested tolerance."""


class SymmetrizationDefectLarge(ElastoDNError, ArithmeticError):
    pass


class IllConditionedS(ElastoDNError, ArithmeticError):
    pass


class SigmaAmbiguous(ElastoDNError, ValueError):
    pass


class SigmaFlat(FlatPatch):
    pass


class ConfigError(ElastoDNError, ValueError):
    pass
