"""Dense Lucas-Kanade optical flow for calibrated fluorescence movies."""

from caflow.errors import (
    CaflowError,
    CalibrationError,
    FormatError,
    InsufficientDataError,
    NoMotionError,
    OutOfBoundsError,
    ParameterError,
    TruncatedFileError,
)
from caflow.flow_core import (
    FlowParams,
    apply_mask,
    compute_flow_field,
    eigen2x2,
    gaussian_window,
    solve_flow,
    to_physical,
)
from caflow.movie_io import (
    Calibration,
    FlowField,
    MovieStack,
    export_csv,
    load_movie,
    read_flow_field,
    save_movie,
    write_flow_field,
)

__version__ = "0.1.0"
