"""Scalable sparse-subspace and low-rank-representation clustering."""
