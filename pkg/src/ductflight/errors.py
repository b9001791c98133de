"""Exception types shared across the package.

Each error carries a short machine-readable ``code`` so that callers (and the
CLI) can report failures without parsing messages.
"""


class DuctFlightError(Exception):
    code = "error"

    def __init__(self, message: str = ""):
        super().__init__(f"{self.code}: {message}" if message else self.code)


class OriginOutsideDuct(DuctFlightError):
    code = "origin-outside-duct"


class OutOfDuct(DuctFlightError):
    code = "out-of-duct"


class CutoffAboveNyquist(DuctFlightError):
    code = "cutoff-above-nyquist"


class Underdetermined(DuctFlightError):
    code = "underdetermined"


class TrainingDiverged(DuctFlightError):
    code = "diverged"

    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"loss became non-finite at epoch {epoch}")


class NumericalFault(DuctFlightError):
    code = "numerical-fault"


class ThrustLimit(DuctFlightError):
    code = "thrust-limit"


class MissingPositions(DuctFlightError):
    code = "missing-positions"

    def __init__(self, missing):
        self.missing = list(missing)
        shown = ", ".join(f"({y:.4f}, {z:.4f})" for y, z in self.missing[:20])
        more = "" if len(self.missing) <= 20 else f" and {len(self.missing) - 20} more"
        super().__init__(f"no record for {len(self.missing)} grid positions: {shown}{more}")


class EmptyInput(DuctFlightError):
    code = "empty-input"


class ConfigError(DuctFlightError):
    code = "config"
