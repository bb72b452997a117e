"""facsep: multi-channel speech separation with factorial spectral models
integrated with CACGMM spatial clustering, plus simulation, beamforming,
and scoring utilities."""

__version__ = "0.1.0"
