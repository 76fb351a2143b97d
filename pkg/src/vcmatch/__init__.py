"""Fund-startup inclusion prediction from multimodal company features and investment-graph structure."""

__version__ = "0.1.0"
