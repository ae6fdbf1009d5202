"""Exception types that the CLI maps to process exit codes."""


class ConfigError(Exception):
    """Invalid or inconsistent experiment configuration (exit code 2)."""


class NumericError(Exception):
    """Numerical failure such as divergent training or a degenerate
    histogram (exit code 3)."""
