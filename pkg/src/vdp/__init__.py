"""Per-video layered decomposition: relighting, dehazing, and unsupervised segmentation."""

from vdp.video import Frame, MaskStack, OpacityMap, VideoSequence, load_frame_sequence, save_frame_sequence

__version__ = "0.1.0"

__all__ = [
    "Frame",
    "MaskStack",
    "OpacityMap",
    "VideoSequence",
    "load_frame_sequence",
    "save_frame_sequence",
]
