"""EEG motor-imagery classification with 3D convolutions, spatial-channel
attention, and dynamic multi-source domain adaptation."""

from dadlnet.tensor import Tensor

__all__ = ["Tensor"]
__version__ = "0.1.0"
