"""Desk-scale cascaded-encoder multi-talker transducer ASR.

Simulates overlapping tone speech, trains single-talker, mask-based
multi-talker, and cascaded multi-talker transducer models on it, probes
mask-encoder activations for per-speaker activity, and evaluates token
error rates with multi-reference assignment.
"""

from . import config, evaluate, frontend, model, nn, overlap, sad, tones, training, transducer

__all__ = [
    "config",
    "evaluate",
    "frontend",
    "model",
    "nn",
    "overlap",
    "sad",
    "tones",
    "training",
    "transducer",
]

__version__ = "0.1.0"
