"""demorphlab: landmark-based face morph synthesis and reference-free
adversarial de-morphing, with biometric evaluation tooling."""

__version__ = "0.1.0"

from .morphing import (  # noqa: F401
    LandmarkSet,
    MorphParams,
    MorphRecord,
    average_landmarks,
    blend,
    create_morph,
    triangulate,
    warp_to_landmarks,
)
