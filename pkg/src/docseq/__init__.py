"""Autoregressive generation of structured documents, layout and text together."""

from .codec import Vocabulary, build_vocab, decode, encode, normalize
from .document import BBox, Document, Element, PUBLAYNET_CATEGORIES, canonical_order, validate
from .net import ModelConfig, init_params
from .sample import Model, SampleConfig, complete_document, generate, place_text_boxes
from .train import TrainConfig, load_checkpoint, save_checkpoint

__version__ = "0.1.0"
