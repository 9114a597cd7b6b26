"""Exception hierarchy for seplab.

Every error carries the process exit code the CLI reports for it.
"""


class SeplabError(Exception):
    """Base class for all seplab errors."""

    exit_code = 1


class ConfigError(SeplabError):
    """A configuration file or override failed validation."""

    exit_code = 2

    def __init__(self, message: str, field_paths: list[str] | None = None):
        super().__init__(message)
        self.field_paths = field_paths or []


class ContractError(SeplabError, ValueError):
    """A precondition of an operation was violated."""

    exit_code = 2


class DimensionError(ContractError):
    """Operand shapes are incompatible."""

    def __init__(self, op: str, *shapes: tuple[int, ...]):
        rendered = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")
        self.op = op
        self.shapes = shapes


class ArtifactError(SeplabError):
    """A file artifact is missing, truncated, or malformed."""

    exit_code = 3


class NumericError(SeplabError):
    """A NaN (or otherwise invalid number) reached a computation."""

    exit_code = 4


class TrainingDivergedError(NumericError):
    """The training loss became NaN."""

    def __init__(self, step: int, term: str = "total"):
        super().__init__(f"loss term '{term}' is NaN at step {step}")
        self.step = step
        self.term = term


class GradCheckFailed(SeplabError):
    """Autodiff gradients disagree with finite differences."""

    exit_code = 5

    def __init__(self, worst_parameter: str, rel_error: float, tolerance: float):
        super().__init__(
            f"gradient check failed: worst offender '{worst_parameter}' "
            f"rel_error={rel_error:.3e} > tolerance={tolerance:.1e}"
        )
        self.worst_parameter = worst_parameter
        self.rel_error = rel_error
        self.tolerance = tolerance


class TemplateError(ConfigError):
    """A text template does not have exactly one class slot."""
