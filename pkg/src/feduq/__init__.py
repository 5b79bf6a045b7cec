"""Federated style alignment with uncertainty-guided aggregation.

A desk-scale simulator: a transformer style extractor and evidential
Dirichlet classifier built on a small float64 autodiff engine, MC-dropout
uncertainty estimation, Gaussian-KL feature alignment, and a two-source,
one-target federated training protocol with uncertainty-weighted model
aggregation.
"""

__version__ = "0.1.0"
