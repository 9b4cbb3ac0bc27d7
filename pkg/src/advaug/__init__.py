"""Adversarially learned data augmentation with an STN + U-Net generator."""

__version__ = "0.1.0"
