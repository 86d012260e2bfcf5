"""Encoder adapter: produces fusion-engine manifests from images and texts."""

from .config import AdapterConfig, check_endpoint
from .cot import CotClient, CotResult
from .encoders import EncodedImage, text_encoder, vision_encoder
from .pipeline import QueryTriple, build_manifest, read_triples
from .segmenter import masked_pool, segment_and_pool, segment_masks

__version__ = "0.1.0"
