"""Grasp-proposal vision, proposal denoising, smooth trajectory generation,
and workspace PD arm control, with a deterministic desk-scale simulator."""

__version__ = "0.1.0"

from .classical import GraspProposal
from .config import PipelineConfig, load_config
from .so3 import Pose

__all__ = ["GraspProposal", "PipelineConfig", "Pose", "load_config", "__version__"]
