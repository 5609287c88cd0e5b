"""Batched sparse code toolkit.

Subpackages cover finite-field linear algebra (gf), rank-distribution
analytics (rankdist), density evolution and degree optimization (degreeopt,
simplex), the outer codec with BP/inactivation decoding (codec), the
erasure-network inner-code simulator (netsim), and the CLI driver (cli).
"""

__version__ = "0.1.0"
