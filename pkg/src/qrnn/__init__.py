"""Hybrid quantum-classical recurrent forecasting of spatial time series.

Exact statevector VQCs inside LSTM/GRU-style cells, POD-based sensor
selection and an autoencoder that rebuilds full fields from sensor values.
"""

from .errors import ConfigError, DataError, NumericalError, QrnnError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "NumericalError", "QrnnError", "__version__"]
