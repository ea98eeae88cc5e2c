"""Tonal-call detection in underwater recordings with a review loop.

The pipeline: WAV sessions are cut into overlapping 1 s windows, turned
into normalized log-mel features, scored by a spectrogram transformer
trained with hand-written gradients, and the highest-scoring negatives
are queued for human review; confirmations feed back into the dataset.
"""

from .audio import (
    Annotation,
    AudioClip,
    RecordingSession,
    cut_clip,
    load_annotations,
    load_wav,
    save_annotations,
    save_wav,
)
from .dataset import (
    DatasetManifest,
    LabeledSample,
    SessionRegistry,
    build_manifest,
    class_weights,
    inject_noise,
    load_manifest,
    save_manifest,
    split_train_test,
    window_and_label,
    window_starts,
)
from .errors import (
    CapacityError,
    ConsistencyError,
    DegenerateDataError,
    FormatError,
    NumericError,
    SampleRateError,
    SireniaError,
    StateError,
)
from .estimator import CallDetector, LogMelTransformer
from .features import (
    FilterbankFeature,
    NormStats,
    build_mel_filterbank,
    compute_stats,
    log_mel,
    mel_scale,
    mel_to_hz,
    normalize,
)
from .feedback import (
    Candidate,
    ReviewStore,
    apply_decisions,
    feedback_experiment,
    mine_candidates,
)
from .model import (
    AdamState,
    Checkpoint,
    ModelConfig,
    adam_step,
    backward,
    forward,
    init_params,
    load_checkpoint,
    loss,
    lr_at_epoch,
    parameter_count,
    patchify,
    save_checkpoint,
)
from .server import ServerConfig, create_app
from .synth import SynthConfig, synth_call, synth_session, write_registry
from .training import (
    Metrics,
    PRCurve,
    TrainRecipe,
    compare_runs,
    evaluate,
    pr_curve,
    train,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
