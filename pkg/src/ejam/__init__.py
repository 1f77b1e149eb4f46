"""Reverberation-conditioned acoustic model ensembles.

A bank of frame classifiers is trained, one per RT60 grid point, over
synthetic reverberant speech; at test time a blind maximum-likelihood
RT60 estimate selects the two most likely members, whose posteriors are
fused with likelihood-derived weights. Members optionally carry a jointly
trained dereverberation feature-mapping front end.
"""

from .audio import AudioSignal, convolve, downsample, read_wav, write_wav
from .config import ExperimentConfig, load_config, save_config
from .ensemble import (
    ClassificationDiagnostics,
    FusionWeights,
    ModelBank,
    classify_utterance,
    compute_weights,
    frame_error_rate,
    fuse_average,
    fuse_two,
    load_bank,
    save_bank,
    select_top2,
    train_bank_eam,
    train_bank_ejam,
)
from .errors import (
    DataError,
    EjamError,
    FormatError,
    InfeasibleRoomError,
    NumericError,
    UndecidableError,
    UnmeasurableDecayError,
)
from .features import (
    FeatureSequence,
    FrameConfig,
    NormStats,
    append_deltas,
    extract_features,
    frame_signal,
    logmel_filterbank,
    normalize,
    splice,
)
from .network import (
    Network,
    NetworkSpec,
    TrainConfig,
    backward,
    cross_entropy_loss,
    deserialize,
    forward,
    init_network,
    mse_loss,
    predict,
    serialize,
    sgd_step,
    stack,
    train,
)
from .pipeline import EvalReport, build_corpus, emit_report, run_evaluation, run_training
from .room import (
    ImpulseResponse,
    RoomSpec,
    eyring_rt60,
    generate_rir,
    measure_rt60_schroeder,
    reflection_from_rt60,
)
from .rt60 import (
    DecayModelParams,
    DecaySegment,
    EstimatorConfig,
    LikelihoodCurve,
    RtEstimate,
    estimate_decay_ml,
    estimate_utterance,
    log_likelihood,
    preselect_decay_segments,
    rho_to_rt60,
    rt60_to_rho,
    synth_decay,
)
from .synth import LabeledUtterance, make_class_prototypes, synth_source

__version__ = "0.1.0"
