from .commands import COMMANDS, CommandResult, execute
from .req import FinemapConfig, RunConfig, ScanConfig, SetTestConfig, SimulateConfig, ValidateAbfConfig
from .settings import Settings

__all__ = [
    "COMMANDS",
    "CommandResult",
    "FinemapConfig",
    "RunConfig",
    "ScanConfig",
    "SetTestConfig",
    "Settings",
    "SimulateConfig",
    "ValidateAbfConfig",
    "execute",
]
