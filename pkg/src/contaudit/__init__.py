"""Continual anomaly detection for journal-entry and payment data.

The package trains dense autoencoders on a stream of payment "experiences"
under five regimes (SEL, JEL, SFT, EWC, ER) and scores entries by their
reconstruction error to surface accounting anomalies.
"""

from contaudit.errors import InputError, InternalError

__version__ = "0.1.0"

__all__ = ["InputError", "InternalError", "__version__"]
