"""Contrastive 2D/3D molecular pre-training, fine-tuning and embedding export."""

__version__ = "0.1.0"
