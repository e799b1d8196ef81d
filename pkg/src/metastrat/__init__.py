"""metastrat: latent-conditioned policies over randomized dynamics.

Training happens on families of randomized desk-scale environments; at test
time a small episode budget adapts the policy's latent input to an unseen
environment via black-box strategy optimization.
"""

__version__ = "0.1.0"
