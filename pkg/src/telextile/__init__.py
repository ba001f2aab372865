"""Latent-space transmission of textile touch.

Pipeline: simulated tactile acquisition -> contrastive encoder training
-> latent indexing and matching -> roller actuation, plus the evaluation
statistics that go with it.
"""

from .augment import AugmentConfig, center_crop, flip_vertical, make_positive_pair, normalize, rotate
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .dataset import (
    DatasetManifest,
    SampleEntry,
    SessionEntry,
    desk_manifest,
    load_dataset,
    save_dataset,
    split_session,
    synthesize_dataset,
    synthetic_manifest,
)
from .index import LatentIndex, build_index, export_centroids, knn_classify, load_centroids, nearest_sample, top_k_similar
from .moco import TrainConfig, TrainHistory, info_nce_loss, momentum_update, sgd_step, train
from .nn import Encoder, EncoderConfig, gradient_check
from .projection import PcaModel, export_map_2d, jacobi_eigh, pca_fit, project, select_equidistant
from .roller import (
    MotorEmulator,
    MotorState,
    ProtocolError,
    RollerConfig,
    apply_command,
    decode_command,
    encode_command,
    goto_slot,
    plan_steps,
    shortest_rotation,
    slot_angle,
)
from .service import (
    MatchingServer,
    MatchingTCPServer,
    run_actuator_client,
    run_sensor_client,
    start_server,
)
from .stats import (
    EvalReport,
    SimilarityTrial,
    generate_synthetic_trials,
    jig_ablation,
    knn_accuracy,
    load_trials,
    make_report,
    random_baseline,
    save_trials,
    spearman_rho,
    t_test_vs_zero,
    topk_accuracy,
)
from .textures import AcquisitionConfig, TactileFrame, TextureSpec, generate_sample_surface, render_pressed_frame, simulate_acquisition

__version__ = "0.1.0"
