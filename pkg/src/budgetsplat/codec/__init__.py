"""Dual-branch compression of Gaussian sets."""
from .entropy import entropy_decode, entropy_encode
from .kdtree import kd_reorder
from .quant import ChannelSpec, dequantize, predictive_decode, predictive_encode, quantize
from .stream import (CompressedStream, StreamError, compress, decompress,
                     split_dynamic_outliers, split_static_outliers)

__all__ = ["ChannelSpec", "CompressedStream", "StreamError", "compress", "decompress",
           "dequantize", "entropy_decode", "entropy_encode", "kd_reorder",
           "predictive_decode", "predictive_encode", "quantize",
           "split_dynamic_outliers", "split_static_outliers"]
