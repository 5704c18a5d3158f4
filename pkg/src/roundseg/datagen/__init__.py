from .templates import TemplateBank, default_bank, class_word
from .scene import generate_scene
from .planner import RoundPlan, plan_conversation, resolve_targets
from .render import render_round, answer_for
from .emit import GenConfig, emit_dataset, load_split

__all__ = [
    "TemplateBank",
    "default_bank",
    "class_word",
    "generate_scene",
    "RoundPlan",
    "plan_conversation",
    "resolve_targets",
    "render_round",
    "answer_for",
    "GenConfig",
    "emit_dataset",
    "load_split",
]
