"""Exception types shared across the package."""


class InputError(ValueError):
    """Bad user-supplied input: files, configs, shapes. CLI exit code 2."""


class InternalError(RuntimeError):
    """Inconsistent internal state, e.g. a stale forward cache. CLI exit code 3."""
