"""Coded packet networks: random linear coding over GF(2^m), lossy hypergraph
models, min-cost subgraph selection (centralized and distributed),
finite-memory coding analysis, routing baselines and dynamic multicast."""

__version__ = "0.1.0"
