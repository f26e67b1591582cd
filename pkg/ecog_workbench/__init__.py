"""
μECoG decoding workbench

Synthetic auditory-evoked recordings, the preprocessing and spectral
analysis chain, rLDA / FBCSP / ConvNet decoders and the confusion-matrix
and rank-sum evaluation layer, driven from `python -m ecog_workbench`.
"""

from .config import PROJECT_DESCRIPTION, PROJECT_NAME, VERSION

__version__ = VERSION
__description__ = PROJECT_DESCRIPTION

__all__ = [
    "PROJECT_NAME",
    "__version__",
]
