"""Masked-diffusion decoding loop with block-wise confidence remasking.

Generation starts from [prompt, mask, ..., mask] and proceeds block by
block: every denoising step predicts all masked positions of the current
block, samples candidate tokens, and finalizes a quota of them by
confidence. Conditioning embeddings may be perturbed per step (see
perturb.taps_step); the decoder itself never rewrites a finalized token.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .numcore import RngState, gumbel_vector
from .perturb import TapsConfig, taps_step, token_mask_perturb
from .schedule import diffusion_time

REMASK_STRATEGIES = ("low_confidence", "low_confidence_dynamic")
SAMPLER_KINDS = ("plain", "top_k", "top_p", "min_p")


class DecodeError(RuntimeError):
    """Denoiser failure, annotated with the decoding step where it happened."""


class DenoiserInterface(Protocol):
    """Anything that can embed a prompt and score all positions of a sequence."""

    def embed(self, tokens: np.ndarray) -> np.ndarray:
        """Token ids -> conditioning embedding matrix, one row per token."""
        ...

    def logits(self, tokens: np.ndarray, e_cond: np.ndarray) -> np.ndarray:
        """Full token sequence + conditioning -> per-position logits over the vocab."""
        ...


@dataclass(frozen=True)
class SamplerSpec:
    """Truncation rule applied before Gumbel-argmax selection.

    plain keeps the whole vocabulary; top_k keeps the k most probable
    tokens; top_p keeps the smallest descending-probability prefix whose
    mass reaches p; min_p keeps tokens with probability >= p_base * max.
    """

    kind: str = "plain"
    k: int = 1
    p: float = 1.0
    p_base: float = 0.1

    def __post_init__(self) -> None:
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"sampler kind must be one of {SAMPLER_KINDS}, got {self.kind!r}")
        if self.kind == "top_k" and self.k < 1:
            raise ValueError(f"top_k needs k >= 1, got {self.k}")
        if self.kind == "top_p" and not (0.0 < self.p <= 1.0):
            raise ValueError(f"top_p needs p in (0, 1], got {self.p}")
        if self.kind == "min_p" and not (0.0 < self.p_base < 1.0):
            raise ValueError(f"min_p needs p_base in (0, 1), got {self.p_base}")


@dataclass(frozen=True)
class GenerationConfig:
    """Shape and sampling settings for one decode call."""

    gen_length: int
    block_length: int
    total_steps: int
    mask_id: int
    temperature: float = 0.0
    remask: str = "low_confidence"
    conf_threshold: float = 0.9
    sampler: SamplerSpec = field(default_factory=SamplerSpec)

    def __post_init__(self) -> None:
        plan_blocks(self.gen_length, self.block_length, self.total_steps)
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.remask not in REMASK_STRATEGIES:
            raise ValueError(f"remask must be one of {REMASK_STRATEGIES}, got {self.remask!r}")
        if not (0.0 < self.conf_threshold <= 1.0):
            raise ValueError(f"conf_threshold must be in (0, 1], got {self.conf_threshold}")


@dataclass(frozen=True)
class StepTrace:
    """What one denoising step did; handed to the generate() observer."""

    block: int
    step: int
    global_step: int
    tau: float
    finalized: tuple[int, ...]
    tokens: np.ndarray


def plan_blocks(L: int, B: int, S: int) -> tuple[int, int, int]:
    """Split L generated tokens into N blocks of B with S_b steps each.

    Returns (N, S_b, S_prime) where S_b = floor(S / N) and S_prime = N * S_b
    is the effective total step count actually executed.
    """
    if L < 1 or B < 1 or S < 1:
        raise ValueError(f"lengths and steps must be positive, got L={L}, B={B}, S={S}")
    if L % B != 0:
        raise ValueError(f"block length {B} must divide generation length {L}")
    n_blocks = L // B
    if S < n_blocks:
        raise ValueError(f"need at least one step per block: S={S} < N={n_blocks}")
    steps_per_block = S // n_blocks
    return n_blocks, steps_per_block, n_blocks * steps_per_block


def transfer_counts(B: int, S_b: int) -> np.ndarray:
    """Per-step finalization quotas within one block.

    Every step gets floor(B / S_b); the remainder of B mod S_b is assigned
    to the last steps, so early steps commit fewer positions. Sums to B.
    """
    if B < 1 or S_b < 1:
        raise ValueError(f"B and S_b must be positive, got B={B}, S_b={S_b}")
    counts = np.full(S_b, B // S_b, dtype=np.int64)
    rem = B % S_b
    if rem:
        counts[S_b - rem:] += 1
    return counts


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax."""
    shifted = logits - logits.max(axis=axis, keepdims=True)
    exps = np.exp(shifted)
    return exps / exps.sum(axis=axis, keepdims=True)


def candidate_set(probs: np.ndarray, sampler: SamplerSpec) -> np.ndarray:
    """Boolean mask of tokens surviving the sampler's truncation, per row.

    Ties at a cutoff are broken toward lower token indices. The mask is
    never empty: every rule keeps at least the most probable token.
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    n_rows, n_vocab = probs.shape
    if sampler.kind == "plain":
        return np.ones_like(probs, dtype=bool)
    keep = np.zeros_like(probs, dtype=bool)
    if sampler.kind == "min_p":
        return probs >= sampler.p_base * probs.max(axis=1, keepdims=True)
    for r in range(n_rows):
        order = np.argsort(-probs[r], kind="stable")
        if sampler.kind == "top_k":
            keep[r, order[: sampler.k]] = True
        else:  # top_p: smallest descending prefix with cumulative mass >= p
            csum = np.cumsum(probs[r, order])
            cut = int(np.searchsorted(csum, sampler.p, side="left"))
            keep[r, order[: min(cut + 1, n_vocab)]] = True
    return keep


def sample_tokens(
    logits: np.ndarray,
    tau_g: float,
    sampler: SamplerSpec,
    rng: RngState,
) -> tuple[np.ndarray, np.ndarray]:
    """Pick one token per row via truncated Gumbel-argmax.

    Truncation operates on softmax(logits / tau_g); selection adds
    tau_g-scaled Gumbel noise to the logits and takes the argmax among
    surviving candidates, which samples the truncated tempered
    distribution. tau_g = 0 degenerates to plain argmax. The returned
    confidence is the renormalized post-truncation probability of the
    chosen token.
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    if tau_g < 0:
        raise ValueError(f"temperature must be >= 0, got {tau_g}")
    n_rows, n_vocab = logits.shape
    temp = tau_g if tau_g > 0 else 1.0
    probs = softmax(logits / temp, axis=1)
    keep = candidate_set(probs, sampler)
    empty = ~keep.any(axis=1)
    if empty.any():
        # unreachable for well-formed rules, but never leave a row with no candidate
        keep[empty, probs[empty].argmax(axis=1)] = True
    noise = gumbel_vector(rng, n_rows * n_vocab, tau_g).reshape(n_rows, n_vocab)
    noisy = np.where(keep, logits + noise, -np.inf)
    tokens = noisy.argmax(axis=1)
    kept_mass = np.where(keep, probs, 0.0).sum(axis=1)
    confidence = probs[np.arange(n_rows), tokens] / kept_mass
    return tokens, confidence


def remask_select(
    confidence: np.ndarray,
    masked_positions: np.ndarray,
    k: int,
    strategy: str = "low_confidence",
    conf_threshold: float = 0.9,
) -> np.ndarray:
    """Choose which masked positions to finalize this step.

    confidence[i] belongs to masked_positions[i]. low_confidence finalizes
    the k most confident positions (everything else stays masked);
    low_confidence_dynamic finalizes every position at or above the
    threshold and always at least the top k, so a block can never stall
    behind its step budget. Ties break toward lower positions. Returns
    sorted absolute positions.
    """
    confidence = np.asarray(confidence, dtype=np.float64)
    masked_positions = np.asarray(masked_positions, dtype=np.int64)
    if confidence.shape != masked_positions.shape:
        raise ValueError("confidence and masked_positions must align")
    if masked_positions.size == 0 and k > 0:
        raise ValueError("cannot finalize from an empty masked set")
    if k > masked_positions.size:
        raise ValueError(f"quota {k} exceeds {masked_positions.size} masked positions")
    if strategy not in REMASK_STRATEGIES:
        raise ValueError(f"unknown remask strategy {strategy!r}")
    order = np.lexsort((masked_positions, -confidence))
    chosen = order[:k]
    if strategy == "low_confidence_dynamic":
        cleared = np.flatnonzero(confidence >= conf_threshold)
        chosen = np.union1d(chosen, cleared)
    return np.sort(masked_positions[chosen])


def generate(
    prompt: np.ndarray,
    denoiser: DenoiserInterface,
    gcfg: GenerationConfig,
    tcfg: TapsConfig | None,
    rng: RngState,
    on_step: Callable[[StepTrace], None] | None = None,
) -> np.ndarray:
    """Decode gen_length tokens after the prompt; returns the full sequence.

    The prompt is embedded once; each step perturbs that conditioning
    according to tcfg (identity when tcfg is None), queries the denoiser on
    the full sequence, samples the masked positions of the current block,
    and finalizes this step's quota. Blocks complete strictly in order and
    the output contains no mask ids.
    """
    prompt = np.asarray(prompt, dtype=np.int64)
    if prompt.ndim != 1 or prompt.size == 0:
        raise ValueError("prompt must be a nonempty 1-D token sequence")
    n_blocks, steps_per_block, total_steps = plan_blocks(
        gcfg.gen_length, gcfg.block_length, gcfg.total_steps
    )
    counts = transfer_counts(gcfg.block_length, steps_per_block)
    prompt_len = prompt.size
    x = np.concatenate([prompt, np.full(gcfg.gen_length, gcfg.mask_id, dtype=np.int64)])

    embed_clean = _call_denoiser(denoiser.embed, prompt, ctx="embedding the prompt")

    for b in range(n_blocks):
        lo = prompt_len + b * gcfg.block_length
        hi = lo + gcfg.block_length
        for i in range(steps_per_block):
            masked = lo + np.flatnonzero(x[lo:hi] == gcfg.mask_id)
            if masked.size == 0:
                break  # block finished ahead of its budget
            g = b * steps_per_block + i + 1
            tau = diffusion_time(g, total_steps)

            x_in = x
            if tcfg is None:
                e_cond = embed_clean
            elif tcfg.mode == "embedding":
                e_cond = taps_step(embed_clean, tau, tcfg, rng)
            else:
                noisy_prompt = token_mask_perturb(prompt, tau, tcfg, gcfg.mask_id, rng)
                if np.array_equal(noisy_prompt, prompt):
                    e_cond = embed_clean
                else:
                    x_in = np.concatenate([noisy_prompt, x[prompt_len:]])
                    e_cond = _call_denoiser(
                        denoiser.embed, noisy_prompt,
                        ctx=f"embedding the masked prompt at block {b}, step {g}",
                    )

            z = _call_denoiser(
                denoiser.logits, x_in, e_cond,
                ctx=f"scoring block {b}, step {g}",
            )
            toks, conf = sample_tokens(z[masked], gcfg.temperature, gcfg.sampler, rng)
            quota = int(min(counts[i], masked.size))
            final_pos = remask_select(conf, masked, quota, gcfg.remask, gcfg.conf_threshold)
            idx = np.searchsorted(masked, final_pos)
            x[final_pos] = toks[idx]

            if on_step is not None:
                on_step(StepTrace(
                    block=b, step=i, global_step=g, tau=tau,
                    finalized=tuple(int(p) for p in final_pos),
                    tokens=x.copy(),
                ))
        still_masked = int((x[lo:hi] == gcfg.mask_id).sum())
        if still_masked:
            raise DecodeError(
                f"block {b} left {still_masked} masked positions after {steps_per_block} steps"
            )
    return x


def _call_denoiser(fn, *args, ctx: str):
    try:
        return fn(*args)
    except Exception as exc:
        raise DecodeError(f"denoiser failed while {ctx}: {exc}") from exc
