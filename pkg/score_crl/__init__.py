"""
score_crl package.

Score-based causal representation learning: recovers latent causal variables
and their DAG from observations under a tanh decoder, given two hard
interventions per latent node.
"""

__version__ = "0.1.0"
