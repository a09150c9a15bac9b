"""Single-channel source separation with a dilated convolutional embedding
network, attractor-based masking, and blind source separation metrics."""

__version__ = "0.1.0"

from .audio_io import Waveform, read_wav, write_wav, resample

__all__ = ["Waveform", "read_wav", "write_wav", "resample", "__version__"]
