"""QRS detection with depth-configurable 1D CNNs and rule-based post-processing."""

from .cnn import CnnModel, ModelConfig, count_macs, count_params, init_model, load_model, save_model
from .evaluate import detect_record, evaluate_dataset, evaluate_record, f1_score, match_beats
from .postprocess import PP_LEVELS, apply_pp, localize_peaks, pp_advanced, pp_minimal, pp_moderate
from .signal_io import AnnotationSet, EcgRecord, SynthParams, synth_ecg
from .training import TrainConfig, make_folds, train

__version__ = "0.1.0"
