"""Deterministic toy corpus: token sequences rendered as tone utterances.

Each vocabulary token owns a fixed sine frequency chosen on the mel scale
so tokens land in distinct filterbank bins. Token id 0 is reserved for
the transducer blank and never synthesized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frontend import FrontendError, Waveform, hz_to_mel, mel_to_hz


@dataclass(frozen=True)
class ToneCorpusConfig:
    sample_rate: int = 8000
    num_tokens: int = 16          # ids 1..num_tokens; 0 is blank
    token_duration_s: float = 0.25
    amplitude: float = 0.25       # headroom for two-speaker unity-gain mixing
    ramp_s: float = 0.005         # raised-cosine onset/offset against clicks
    fmin_hz: float = 300.0
    fmax_hz: float = 3400.0
    min_tokens: int = 6
    max_tokens: int = 12

    @property
    def vocab_size(self) -> int:
        """Total ids including blank."""
        return self.num_tokens + 1

    @property
    def token_samples(self) -> int:
        return int(round(self.token_duration_s * self.sample_rate))


def token_frequencies(cfg: ToneCorpusConfig) -> np.ndarray:
    """Hz frequency for token ids 1..num_tokens, mel-uniformly spaced."""
    mels = np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz), cfg.num_tokens)
    return mel_to_hz(mels)


def synth_tone_utterance(token_seq, cfg: ToneCorpusConfig, seed: int = 0):
    """Render a token sequence to a waveform; bit-deterministic in (seq, seed).

    Returns (Waveform, token list). Per-token phases come from the seeded
    stream so repeated tokens do not produce identical sample runs.
    """
    tokens = [int(t) for t in token_seq]
    freqs = token_frequencies(cfg)
    for t in tokens:
        if not (1 <= t <= cfg.num_tokens):
            raise FrontendError(f"unknown token id: {t}")
    n_tok = cfg.token_samples
    rng = np.random.default_rng(np.random.SeedSequence([0x70E5, seed & 0xFFFFFFFF]))
    out = np.zeros(n_tok * len(tokens))
    tt = np.arange(n_tok) / cfg.sample_rate
    ramp_n = min(int(cfg.ramp_s * cfg.sample_rate), n_tok // 2)
    env = np.ones(n_tok)
    if ramp_n > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp_n) / ramp_n)
        env[:ramp_n] = ramp
        env[-ramp_n:] = ramp[::-1]
    for i, tok in enumerate(tokens):
        phase = rng.uniform(0.0, 2.0 * np.pi)
        tone = cfg.amplitude * np.sin(2.0 * np.pi * freqs[tok - 1] * tt + phase)
        out[i * n_tok:(i + 1) * n_tok] = tone * env
    return Waveform(out, cfg.sample_rate), tokens


def sample_token_sequence(rng: np.random.Generator, cfg: ToneCorpusConfig):
    """Uniform random sequence with no immediate repeats: two identical
    adjacent pure tones have no audible boundary, so the corpus avoids
    them."""
    n = int(rng.integers(cfg.min_tokens, cfg.max_tokens + 1))
    tokens: list[int] = []
    prev = 0
    for _ in range(n):
        if prev == 0:
            tok = int(rng.integers(1, cfg.num_tokens + 1))
        else:
            draw = int(rng.integers(1, cfg.num_tokens))  # one fewer choice
            tok = draw + (1 if draw >= prev else 0)
        tokens.append(tok)
        prev = tok
    return tokens
