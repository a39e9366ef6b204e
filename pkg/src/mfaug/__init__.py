"""Multiplication-free tiny networks trained with hybrid-computing augmentation."""

__version__ = "0.1.0"
