"""Class selectivity of single units: metrics, a selectivity regularizer, and
the analyses built on top (PWCCA distances, off-axis selectivity bounds)."""

from . import numnet, projbound, pwcca, selmetrics, selreg

__version__ = "0.1.0"

__all__ = ["numnet", "projbound", "pwcca", "selmetrics", "selreg"]
