"""Multi-fidelity surrogates for simulators with field outputs."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("mffield")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

__all__ = ["__version__"]
