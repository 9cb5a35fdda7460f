"""Offline signature verification toolkit.

Scattering-wavelet feature extraction, a shared-weight convolutional
embedding network trained with triplet loss, and the biometric evaluation
metrics (ROC/AUC, PR/AUPR, FMR/FNMR, EER) used to score it.

Kept import-light so the command-line entry point can pin threading
environment variables before numpy loads.
"""

__version__ = "0.1.0"
