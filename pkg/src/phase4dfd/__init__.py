"""Phase-aware multi-domain deepfake detection, desk scale.

RGB input is augmented with an FFT log-magnitude channel and a soft local
binary pattern channel, optionally reweighted by an input-level attention
map computed from the magnitude and phase spectra, then classified by a
compact convolutional backbone. Everything (FFT, autodiff, optimizer,
metrics) is implemented in-repo on top of numpy.
"""

__version__ = "0.1.0"

from .engine import Tensor, GradTape, grad_check  # noqa: F401
