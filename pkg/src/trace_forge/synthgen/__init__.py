"""Synthetic multi-view eye-frame samples with exact ground-truth traces."""

from .augment import AugmentationConfig, apply_geometric, augment, transform_trace
from .contour import FAMILIES, FrameContour
from .dataset import Dataset, Manifest, build_dataset, export_masks, read_masks, validate_dataset
from .render import Appearance, RenderConfig, render_views, truth_trace
from .sample import MultiViewSample, View, read_sample, write_sample
from .scene import ContourConfig, Scene, SceneConfig, generate_scene_samples, make_scene, sample_contour, sample_scene, split_eyes

__all__ = [
    "Appearance",
    "AugmentationConfig",
    "ContourConfig",
    "Dataset",
    "FAMILIES",
    "FrameContour",
    "Manifest",
    "MultiViewSample",
    "RenderConfig",
    "Scene",
    "SceneConfig",
    "View",
    "apply_geometric",
    "augment",
    "build_dataset",
    "export_masks",
    "generate_scene_samples",
    "make_scene",
    "read_masks",
    "read_sample",
    "render_views",
    "sample_contour",
    "sample_scene",
    "split_eyes",
    "transform_trace",
    "truth_trace",
    "validate_dataset",
    "write_sample",
]
