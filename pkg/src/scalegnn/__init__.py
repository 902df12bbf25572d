"""Self-explaining GNN framework: a GCN teacher trained jointly with
specialty students whose parameters double as instant structural and
feature explanations."""

__version__ = "0.1.0"
