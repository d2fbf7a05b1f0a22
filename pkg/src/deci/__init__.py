"""End-to-end causal inference: learn a posterior over DAGs together with a
flow-based SEM, then answer interventional and conditional queries with it."""

__version__ = "0.1.0"
