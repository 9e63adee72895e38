"""Exception hierarchy shared by every module.

Each class carries a short machine-readable ``code`` used by the CLI as the
prefix of its single-line error message.
"""


class StmiError(Exception):
    code = "E_STMI"
    exit_code = 1


class DimensionError(StmiError, ValueError):
    code = "E_DIMENSION"
    exit_code = 3


class DomainError(StmiError, ValueError):
    code = "E_DOMAIN"
    exit_code = 4


class ContractError(StmiError, ValueError):
    code = "E_CONTRACT"
    exit_code = 3


class FormatError(StmiError, ValueError):
    code = "E_FORMAT"
    exit_code = 3


class NumericError(StmiError, FloatingPointError):
    """A loss went non-finite during training."""

    code = "E_NUMERIC"
    exit_code = 4

    def __init__(self, step, term, value=float("nan")):
        self.step = step
        self.term = term
        self.value = value
        super().__init__(f"non-finite {term} loss ({value}) at step {step}")
