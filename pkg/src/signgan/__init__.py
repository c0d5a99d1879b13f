"""Two-stage sign language production: text -> pose (transformer + MDN) -> video (pose-conditioned GAN)."""

__version__ = "0.1.0"
