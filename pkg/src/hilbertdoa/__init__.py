"""Hilbert-transform wideband beamforming and DoA estimation, with a spiking
(STHT -> RZCC -> LIF) realisation and an FFT-bin baseline."""

__version__ = "0.1.0"

from .geometry import ArrayGeometry, DoaGrid, delays, steering_matrix, steering_vector  # noqa: E402
from .hilbert import AnalyticSignal, SthtKernel, analytic_full, stht, stht_kernel  # noqa: E402
from .rzcc import SpikeRaster, rzcc_encode  # noqa: E402
from .snn import LifConfig, QuantSpec  # noqa: E402
from .beamform import BeamformerBank, DoaTrace  # noqa: E402
from .estimators import (  # noqa: E402
    HilbertBeamformer,
    MusicBeamformer,
    RzccEncoder,
    SpikingHilbertBeamformer,
    SthtTransformer,
)

__all__ = [
    "AnalyticSignal",
    "ArrayGeometry",
    "BeamformerBank",
    "DoaGrid",
    "DoaTrace",
    "HilbertBeamformer",
    "LifConfig",
    "MusicBeamformer",
    "QuantSpec",
    "RzccEncoder",
    "SpikeRaster",
    "SpikingHilbertBeamformer",
    "SthtKernel",
    "SthtTransformer",
    "analytic_full",
    "delays",
    "rzcc_encode",
    "stht",
    "stht_kernel",
    "steering_matrix",
    "steering_vector",
]
