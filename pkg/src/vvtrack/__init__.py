"""Video object detection, recognition and multi-object tracking toolkit.

Pipeline stages: adaptive background / motion masks, shadow-free
reconstruction by masked gradient integration, visual-vocabulary
recognition with a cubic-kernel SVM, and annealed-Gaussian particle
swarm tracking with per-object species.
"""

__version__ = "0.1.0"
