"""Joint image/video training toolkit for single-frame object detectors."""

from .boxes import BoundingBox
from .datapipe import (
    CorpusDataset,
    JointBatch,
    ManifestError,
    horizontal_flip,
    in_memory_dataset,
    joint_batches,
    load_manifest,
)
from .detector import (
    Detection,
    DetectorConfig,
    DetectorState,
    build_detector,
    detection_loss,
    encode,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .driver import (
    Arm,
    RunRecord,
    TrainingConfig,
    TrainingDiverged,
    lr_at,
    full_scale_schedule,
    run_experiment_matrix,
    train,
)
from .estimator import MixupTcrDetector
from .evalkit import APReport, average_precision, evaluate_detector, iou, match_detections
from .mixup import (
    LambdaDistribution,
    MixupConfig,
    MixupSample,
    blend_inputs,
    make_virtual_sample,
    resize_frame,
    sample_lambda,
)
from .samples import FrameTriple, LabeledImage, VideoFrame
from .synthgen import (
    CorpusConfig,
    SceneSpec,
    SceneStyle,
    gen_corpus,
    gen_report_image,
    gen_video,
    split_counts,
)
from .tcr import TcrConfig, combined_loss, estimate_midframe, tcr_loss

__version__ = "0.1.0"
