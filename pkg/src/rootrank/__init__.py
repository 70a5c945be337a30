"""rootrank: rank the deleted lines of bug-fixing commits by root-cause likelihood."""

__version__ = "0.1.0"
