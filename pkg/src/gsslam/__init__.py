"""Dense RGB-D SLAM over a map of isotropic 3D Gaussians."""
from .core import (CameraIntrinsics, CameraPose, Gaussian, GaussianMap, RgbdFrame, SlamConfig,
                   pose_inverse, world_to_camera)
from .renderer import RenderOutput, project, render

__version__ = "0.1.0"
