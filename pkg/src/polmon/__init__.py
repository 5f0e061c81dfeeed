"""polmon: train demonstration-conditioned policies in synthetic multi-stage
environments and monitor them online for behavior errors."""

__version__ = "0.1.0"
