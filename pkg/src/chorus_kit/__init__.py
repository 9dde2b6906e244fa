"""Chorus detection toolkit.

Mel-spectrogram front end, a multi-scale convolutional encoder, stacked
self-attention/convolution blocks producing a per-second chorus probability
curve, median smoothing with adaptive-threshold binarization, evaluation
metrics and a training loop, all on a small numpy autodiff core.
"""

__version__ = "0.1.0"
FORMAT_VERSIONS = {"features": 1, "checkpoint": 1}
