from .vocab import SPECIALS, Vocabulary, build_vocabulary, tokenize
from .config import ModelConfig
from .assembly import PromptAssembly, build_assembly, history_token_ids
from .network import SegModel
from .checkpoint import load_model, save_model

__all__ = [
    "SPECIALS",
    "Vocabulary",
    "build_vocabulary",
    "tokenize",
    "ModelConfig",
    "PromptAssembly",
    "build_assembly",
    "history_token_ids",
    "SegModel",
    "load_model",
    "save_model",
]
