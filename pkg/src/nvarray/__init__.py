"""Monte Carlo pipeline for masked NV-centre arrays: implantation, NV formation,
confocal imaging, photon correlation and emitter statistics."""

__version__ = "0.1.0"
