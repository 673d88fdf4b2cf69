"""Tracer-kinetics engine for dynamic PET.

Simulate 4-D scans from kinetic parameter maps and an arterial input
function via the irreversible two-tissue compartment model, and invert it:
voxel-wise parametric mapping with a known AIF, or joint AIF + parameter
estimation from the image alone.
"""

__version__ = "0.1.0"

from .aif import (
    CurveDiagnostics,
    FengAif,
    SampledCurve,
    cumulative_integral,
    feng_curve,
    feng_eval,
    interp,
    read_aif_csv,
    write_aif_csv,
)
from .errors import NumericError, PetkinError, ValidationError
from .fitting import (
    FitConfig,
    FitResult,
    fit_volume,
    lls_fit,
    nls_fit,
    residual_rms_volume,
)
from .kinetics import (
    DynamicImage,
    ForwardContext,
    KineticParams,
    ParametricMaps,
    forward_model,
    forward_model_jacobian,
    forward_volume,
    impulse_response,
    ki,
    tissue_response,
)
from .metrics import SsimConfig, aif_metrics, psnr, ssim
from .phantom import (
    Phantom,
    PhantomSpec,
    Region,
    build_phantom,
    default_mouse_spec,
    simulate_scan,
)
from .sime import SimeConfig, sime_estimate
from .timegrid import (
    FineGrid,
    FrameSchedule,
    fine_grid,
    make_schedule,
    mid_times,
    to_segments,
)

__all__ = [name for name in dir() if not name.startswith("_")]
