"""QCA cell-level simulator, fault-injection lab, and redundancy toolkit."""

__version__ = "0.1.0"
