from .config import RunConfig, load_config, parse_config
from .commands import COMMANDS, run

__all__ = ["RunConfig", "load_config", "parse_config", "COMMANDS", "run"]
