"""Transformer context model for entropy coding of quantized latents."""

from .codec import (
    CodecHeader,
    FormatError,
    Model,
    decode_latent,
    encode_latent,
    gen_synthetic_latent,
    read_latent,
    write_latent,
)
from .entropy import EntropyParams, entropy_head, estimate_rate, gmm_pmf, gmm_pmf_table, quantize
from .layout import CodingOrder, SeqElement, SequenceLayout, slot_of
from .model import ModelConfig, ScaleMode, forward_global, forward_window, masked_mha
from .rangecoder import CorruptStreamError, build_cdf, decode_symbols, encode_symbols
from .scheduler import ScheduleMode, build_schedule, enumerate_windows, make_schedule, verify_causality
from .window import WindowGeometry

__version__ = "0.1.0"
