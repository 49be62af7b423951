"""Exception types shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 2, ContractError -> 3,
SimulationDiverged -> 4.
"""


class ConfigError(ValueError):
    """Invalid configuration value or malformed config file."""


class ContractError(ValueError):
    """A caller violated an operation precondition (e.g. dimension mismatch)."""


class SimulationDiverged(RuntimeError):
    """Physics state became non-finite; carries the offending step index."""

    def __init__(self, step_index: int):
        super().__init__(f"simulation diverged at step {step_index}")
        self.step_index = step_index
