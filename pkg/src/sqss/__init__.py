"""Multi-party semi-quantum secret sharing: simulator and analysis toolkit."""

__version__ = "0.1.0"
