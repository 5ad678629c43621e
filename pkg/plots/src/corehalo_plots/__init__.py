"""Figure rendering for corehalo experiment CSVs."""

from .figures import FIGURES, MissingInput, render

__all__ = ["FIGURES", "MissingInput", "render"]
__version__ = "0.1.0"
