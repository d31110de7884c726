"""Compatible vector fields and invariants of one-dimensional time-dependent Hamiltonians."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("frobinv")
except PackageNotFoundError:
    __version__ = "0.0.0"
