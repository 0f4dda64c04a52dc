"""Mask-based and recurrent neural beamformers for multichannel target speech separation."""

__version__ = "0.1.0"
