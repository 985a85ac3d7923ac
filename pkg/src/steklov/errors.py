"""Exception types shared across the solver."""


class SolverError(Exception):
    """Base class for all solver failures."""


class ConfigError(SolverError):
    """Invalid mesh, problem, or run configuration."""


class CrossTermError(ConfigError):
    """Operator has mixed second derivatives but the mesh drops corner nodes."""


class LeafSingularError(SolverError):
    """The interior collocation block of one leaf is (numerically) singular."""

    def __init__(self, leaf_index, detail=""):
        self.leaf_index = leaf_index
        msg = f"singular interior block on leaf {leaf_index}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class StructurallySingularError(SolverError):
    """Sparse matrix has an empty row or column."""


class NumericallySingularError(SolverError):
    """No acceptable pivot during numeric factorization."""

    def __init__(self, step, msg=None):
        self.step = step
        super().__init__(msg or f"zero pivot at elimination step {step}")


class OracleCapExceededError(SolverError):
    """Dense reference solve requested beyond the configured size cap."""
