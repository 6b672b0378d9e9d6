"""Box-only 3D multi-object tracking via learned pairwise linking scores.

A transformer encoder embeds every detection box in a sliding window; the
cosine-derived score between two embeddings says whether they belong to
the same object.  Online and offline trackers, synthetic data, training,
and CLEAR metrics are included; `bott --help` shows the pipeline.
"""

from .estimator import BoxLinkTracker
from .types import Box3D, DetectionFrame, SceneDB, SlidingWindow, Track, TrackStatus

__version__ = "0.1.0"

__all__ = [
    "Box3D",
    "BoxLinkTracker",
    "DetectionFrame",
    "SceneDB",
    "SlidingWindow",
    "Track",
    "TrackStatus",
    "__version__",
]
