"""Adversarial debiasing for temporal sentence grounding, desk scale.

Conditional bias generators synthesize bias-conflict samples on the fly;
a span-based grounding model and a bias discriminator are trained against
them in an alternating min-max loop; synthetic corpora with planted
spurious correlations provide IID/OOD splits to measure the debiasing
effect end to end.
"""

__version__ = "0.1.0"
