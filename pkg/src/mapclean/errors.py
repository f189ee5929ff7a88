class MapCleanError(Exception):
    """Base class for all mapclean errors."""


class ParseError(MapCleanError):
    """A file exists but its content is malformed or truncated."""


class ContractError(MapCleanError):
    """Inputs violate an API precondition (mismatched lengths, bad schema, ...)."""
