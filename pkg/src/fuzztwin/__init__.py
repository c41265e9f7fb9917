"""Protocol-fuzzing workbench around a simulated RRC-style handshake twin."""

__version__ = "0.1.0"
