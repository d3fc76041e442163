"""Audio-visual scene classification at desk scale.

Spectrogram front-ends (mel, gammatone, constant-Q), a small NumPy
network engine with exact backprop, late fusion, and a CLI tying the
pipeline together.
"""

from .errors import (
    AlignmentError,
    AvsceneError,
    CorruptionError,
    DataError,
    FormatError,
    LabelError,
    NumericError,
    ProvenanceError,
    ShapeError,
    SpecError,
    StateError,
    UnsupportedCodecError,
)
from .frontend import (
    ChannelStats,
    FilterbankSpec,
    KINDS,
    N_BANDS,
    N_CHANNELS,
    N_FRAMES,
    N_PATCHES,
    PATCH_HOP,
    PATCH_LEN,
    PatchSet,
    SpectrogramTensor,
    apply_filterbank,
    assemble_tensor,
    channel_stats,
    default_filterbank,
    delta,
    extract_features,
    filterbank_matrix,
    load_feature,
    log_compress,
    normalize,
    save_feature,
    split_patches,
    stft_power,
)
from .wavio import AudioClip, load_wav, write_wav
from .models import (
    ArchitectureSpec,
    LayerSpec,
    arch_from_identifier,
    build_mlp,
    build_vgg14,
    load_checkpoint,
    save_checkpoint,
    shape_flow,
)
from .network import Network, eval_probs, predict_clip
from .training import (
    AdamState,
    MixupDraw,
    TrainingConfig,
    adam_init,
    adam_step,
    draw_mixup,
    kl_loss,
    mixup_batch,
    train,
)
from .embeddings import (
    EmbeddingSet,
    KNOWN_SOURCE_DIMS,
    UNLABELED,
    read_embeddings,
    to_batches,
    write_embeddings,
)
from .fusion import (
    EarlyDetectionCurve,
    EvaluationResult,
    FrameworkProbabilities,
    FUSION_STRATEGIES,
    accuracy,
    align_frameworks,
    argmax_label,
    early_detection_curve,
    fuse_max,
    fuse_mean,
    fuse_prod,
    label_rows,
    mean_over_patches,
    read_early_csv,
    read_patch_probs_csv,
    read_probs_csv,
    write_confusion_csv,
    write_early_csv,
    write_patch_probs_csv,
    write_probs_csv,
)
from .manifest import (
    CLASS_NAMES,
    DatasetManifest,
    ManifestRow,
    N_CLASSES,
    load_manifest,
    one_hot,
    save_manifest,
)
from .synth import synth_bundle, synth_clip, synth_dataset, synth_embeddings

__version__ = "0.1.0"
