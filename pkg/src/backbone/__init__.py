"""Miniature frozen dual encoder: embeddings, towers, pretraining, checkpoints."""

from backbone.checkpoint import load_checkpoint, save_checkpoint
from backbone.clip import MiniClip
from backbone.encoder import Encoder, TokenSequence, encoder_layer_forward
from backbone.params import BackboneParams
from backbone.pretrain import contrastive_pretrain

__all__ = [
    "BackboneParams",
    "Encoder",
    "MiniClip",
    "TokenSequence",
    "contrastive_pretrain",
    "encoder_layer_forward",
    "load_checkpoint",
    "save_checkpoint",
]
