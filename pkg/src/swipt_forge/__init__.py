"""PAPR-aware MIMO-OFDM SWIPT simulation and subcarrier allocation toolkit."""

__version__ = "0.1.0"
