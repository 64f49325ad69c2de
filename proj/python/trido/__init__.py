"""Direct PET reconstruction from low-dose sinograms.

Thin Python face of the C++ core: simulation, the projector and OSEM,
metrics, tensor files and the trained model.
"""

from ._core import (
    ConfigError,
    FormatError,
    Model,
    ShapeError,
    TrainingDiverged,
    back_project,
    default_config,
    forward_project,
    global_frequency_parser,
    gradcheck,
    irdft2,
    load_tensor,
    make_dataset,
    nmse,
    osem,
    psnr,
    radial_spectrum,
    rdft2,
    save_tensor,
    simulate_dose,
    ssim,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
