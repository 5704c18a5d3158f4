from .session import (
    JcmConfig,
    RoundResult,
    SessionState,
    correct,
    integrate_mask_info,
    judge,
    run_conversation,
    run_round,
    start_session,
)
from .rollout import run_conversations_batched

__all__ = [
    "JcmConfig",
    "RoundResult",
    "SessionState",
    "correct",
    "integrate_mask_info",
    "judge",
    "run_conversation",
    "run_round",
    "start_session",
    "run_conversations_batched",
]
