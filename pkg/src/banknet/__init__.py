"""banknet: systemic-risk toolkit for interbank contagion and default prediction.

Reconstructs bilateral interbank exposure networks from aggregate balance
sheets, simulates equity contagion over the reconstructed network to obtain a
per-bank contagion proxy, and evaluates that proxy against classical
financial ratios with two from-scratch classifiers.
"""

__version__ = "0.1.0"

from . import balance_sheets, dataset, debtrank, logit, mlp, reconstruction

__all__ = [
    "__version__",
    "balance_sheets",
    "dataset",
    "debtrank",
    "logit",
    "mlp",
    "reconstruction",
]
