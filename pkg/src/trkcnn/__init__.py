"""Transferable ranking CNNs for ordinal image classification."""

from .backbone import Backbone, BackboneConfig, build, forward, predict, transfer_weights
from .cam import RoiCache, RoiMap, compute_cam, distance_weight, extract_rois, merge_roi, znormalize
from .data import Manifest, SampleSet, SynthSpec, generate, load, split
from .imaging import AugmentPolicy, RegionSpec, augment, concat_roi, preprocess
from .losses import cea_loss
from .metrics import ConfusionMatrix, MetricsReport, confusion, metrics, render_report
from .pipeline import RunConfig, ensemble_vote, predict_final, run_experiment, train_final
from .ranking import SubModelBank, aggregate, relabel, train_bank, train_multiclass

__version__ = "0.1.0"
