"""Pain-intensity modeling from facial keypoint recordings.

Parsing and alignment of the on-disk recording formats (codec), per-frame
feature extraction (dataset), a two-level regression/classification model
(mlp, aggregate), multiple-instance learning with frame sampling (mil, svm,
gp), patient-disjoint evaluation (evaluate, report), and a synthetic data
generator with planted ground truth (synth). The `painface` command wires
these into workflows; see cli.
"""

__version__ = "0.1.0"

from .codec import load_recording, discover_recordings, validate_tree
from .dataset import FeatureKind, SequenceSample, build_sequences
from .evaluate import ExperimentConfig, run_experiment
from .report import render_text_table, write_report_files
from .synth import SynthConfig, generate, generate_dataset

__all__ = [
    "__version__",
    "load_recording", "discover_recordings", "validate_tree",
    "FeatureKind", "SequenceSample", "build_sequences",
    "ExperimentConfig", "run_experiment",
    "render_text_table", "write_report_files",
    "SynthConfig", "generate", "generate_dataset",
]
