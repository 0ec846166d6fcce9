"""matchkit: entity-matching corpus toolchain.

Builds binary-labeled and explanation-augmented generative training corpora
from entity-matching datasets, applies explanation ablations, plans
cross-domain/schema/distribution experiments, and scores matcher output
including robustness (flip rate) and factuality (Fleiss's kappa) protocols.
"""

__version__ = "0.1.0"
