"""Fully convolutional arterial input function prediction for dynamic
small-animal PET, with synthetic phantom data, arterial-line calibration,
training, and kinetic-model evaluation."""

__version__ = "0.1.0"

from .data import DynamicPetImage, FrameSchedule, InputFunction
from .model import (
    BaselineModel,
    FcDlifModel,
    SfeConfig,
    TfeConfig,
    build_baseline,
    build_desk_baseline,
    build_desk_fcdlif,
    build_fcdlif,
    desk_scale_sfe,
    paper_scale_sfe,
)
from .phantom import (
    ContinuousDetectorTrace,
    EllipsoidRegion,
    FengParams,
    KineticParams,
    Phantom,
    feng_aif,
    make_mouse_phantom,
    render_phantom,
    simulate_detector_trace,
    tissue_tac,
    to_suv,
)
from .calibration import (
    CalibrationResult,
    apply_calibration,
    calibrate_trace,
    calibration_factors,
    delay_correct,
    mad_outlier_filter,
    resample_to_frames,
)
from .training import (
    LossWeights,
    TrainConfig,
    cross_validate,
    kfold_split,
    poisson_augment,
    train,
    weighted_mse,
)
from .evaluation import (
    OrthRegressionResult,
    PatlakResult,
    mbe,
    mse,
    orthogonal_regression,
    paired_ttest,
    patlak_ki,
    qq_points,
    segment_error_profile,
    shift_test,
    truncation_test,
    voxelwise_patlak,
)
from .tsne import TsneConfig, tsne_embed
