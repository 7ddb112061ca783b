"""malflows: flow-feature graph embedding and fusion for app malware classification."""

__version__ = "0.1.0"
