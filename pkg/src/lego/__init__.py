"""Desk-scale three-stage domain adaptation for image restoration.

Stage 0 runs a restorer pre-trained on a weak degradation domain over
unlabeled strong-domain inputs; Stage 1 refines those predictions with an
analytic Gaussian-mixture rectified-flow oracle and keeps the ones a
density-based quality gate accepts; Stage 2 fine-tunes on a mix of the
original pairs and the accepted pseudo-pairs.
"""

__version__ = "0.1.0"
