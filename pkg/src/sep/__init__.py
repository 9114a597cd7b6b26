"""Self-enhanced prompting: selection, fusion and the layer recurrences."""

from sep.discovery import get_fusion, get_selection, list_fusions, list_selections
from sep.forward import enhanced_forward, ivlp_forward, plain_forward
from sep.fusion import AddFusion, MlpFusion, TokenFusion, token_fusion
from sep.model import SepModel, init_prompts
from sep.prompts import (
    PromptParams,
    append_prompt,
    load_prompts,
    merge_tokens,
    save_prompts,
    split_tokens,
)
from sep.selection import ActivationSelection, FrontSelection, activation_scores

__all__ = [
    "ActivationSelection",
    "AddFusion",
    "FrontSelection",
    "MlpFusion",
    "PromptParams",
    "SepModel",
    "TokenFusion",
    "activation_scores",
    "append_prompt",
    "enhanced_forward",
    "get_fusion",
    "get_selection",
    "init_prompts",
    "ivlp_forward",
    "list_fusions",
    "list_selections",
    "load_prompts",
    "merge_tokens",
    "plain_forward",
    "save_prompts",
    "split_tokens",
    "token_fusion",
]
