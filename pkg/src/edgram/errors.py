"""Exception hierarchy.

Every error carries enough location information to be acted on: a state
index for evaluation failures, a step index for divergence, a character
offset for parse failures.  The CLI maps each class to a fixed exit code.
"""


class EdgramError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(EdgramError, ValueError):
    """Inconsistent dimensions, bad grid, malformed model file."""

    exit_code = 2


class ParseError(ConfigError):
    """Expression text does not match the grammar."""

    def __init__(self, message, pos, expected=()):
        self.pos = pos
        self.expected = tuple(sorted(set(expected)))
        text = f"{message} at offset {pos}"
        if self.expected:
            text += f" (expected one of: {', '.join(self.expected)})"
        super().__init__(text)


class EvaluationError(EdgramError, ArithmeticError):
    """A vector field, output map or expression produced an invalid value.

    ``index`` is the offending component (0-based) when known, ``pos`` the
    character offset inside an expression when known.
    """

    exit_code = 3

    def __init__(self, message, index=None, pos=None):
        self.index = index
        self.pos = pos
        if index is not None:
            message = f"{message} (component {index})"
        if pos is not None:
            message = f"{message} at offset {pos}"
        super().__init__(message)


class DivergenceError(EdgramError, ArithmeticError):
    """A simulated state left the admissible range."""

    exit_code = 3

    def __init__(self, step, t=None, message=None):
        self.step = step
        self.t = t
        if message is None:
            message = f"integration diverged at step {step}"
            if t is not None:
                message += f" (t = {t:.6g})"
        super().__init__(message)


class GramianError(EdgramError):
    """An assembled Gramian violates symmetry or semi-definiteness,
    or a precondition such as a symmetry certificate failed."""

    exit_code = 4


class RankError(EdgramError):
    """Requested truncation order exceeds the effective rank."""

    exit_code = 5
