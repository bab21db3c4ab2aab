"""Offline ViT feature exporter producing VPRF containers."""
__version__ = "0.1.0"
