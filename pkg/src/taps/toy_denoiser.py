"""A tiny deterministic denoiser with a branching grammar.

The model scores tokens from a mean-pooled view of the conditioning
embeddings through a fixed linear head, plus a large bonus on
grammar-admissible tokens. Generated sequences follow a fixed slot layout:

    [neutral, neutral, family marker, body ..., closer]

Which of the marker families wins depends on the pooled conditioning
through deliberately moderate score margins, so perturbing the
conditioning early (before the marker commits) flips the branch, while
perturbing late only jiggles body-word choices. The admissibility bonus is
far larger than any conditioning swing, so outputs stay grammatical either
way. Everything is derived from one integer seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import RngState, gaussian_matrix, splitmix64

_BODY_CHOICES_PER_SLOT = 3

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


@dataclass(frozen=True)
class GrammarSpec:
    """Slot layout and admissible-token rules for generated sequences.

    Slot 0 and 1 take fixed neutral tokens, slot 2 takes one of the family
    markers, the final slot takes the closer, and every slot in between is
    a body slot admitting a small per-(family, slot) subset of that
    family's word pool. Until a family token has been finalized, body and
    marker slots admit the union over families.
    """

    neutral_a: int
    neutral_b: int
    closer: int
    markers: tuple[int, ...]
    pools: tuple[tuple[int, ...], ...]
    choice_seed: int

    def __post_init__(self) -> None:
        if len(self.markers) < 2:
            raise ValueError("grammar needs at least two branch families")
        if len(self.pools) != len(self.markers):
            raise ValueError("one word pool per family marker is required")

    @property
    def n_families(self) -> int:
        return len(self.markers)

    def family_of(self, token: int) -> int | None:
        """Family index of a marker or pool token, None for anything else."""
        for f, marker in enumerate(self.markers):
            if token == marker or token in self.pools[f]:
                return f
        return None

    def body_choices(self, family: int, slot: int) -> tuple[int, ...]:
        """The admissible body tokens for one (family, slot) pair, seeded."""
        pool = self.pools[family]
        picks: list[int] = []
        h = splitmix64((self.choice_seed * 1_000_003 + family) * 1_000_003 + slot)
        while len(picks) < min(_BODY_CHOICES_PER_SLOT, len(pool)):
            h = splitmix64(h)
            cand = pool[h % len(pool)]
            if cand not in picks:
                picks.append(cand)
        return tuple(sorted(picks))

    def admissible(self, slot: int, length: int, family: int | None) -> tuple[int, ...]:
        """Tokens allowed at a slot, given the committed family (None = any)."""
        if slot < 0 or slot >= length:
            raise ValueError(f"slot {slot} outside sequence of length {length}")
        if slot == 0:
            return (self.neutral_a,)
        if slot == 1:
            return (self.neutral_b,)
        if slot == 2:
            if family is None:
                return self.markers
            return (self.markers[family],)
        if slot == length - 1 and length >= 4:
            return (self.closer,)
        if family is not None:
            return self.body_choices(family, slot)
        merged: list[int] = []
        for f in range(self.n_families):
            merged.extend(self.body_choices(f, slot))
        return tuple(sorted(set(merged)))

    def committed_family(self, gen_tokens, mask_id: int) -> int | None:
        """Family of the earliest finalized family token, None if uncommitted."""
        for tok in gen_tokens:
            if tok == mask_id:
                continue
            fam = self.family_of(int(tok))
            if fam is not None:
                return fam
        return None


def validity(tokens, spec: GrammarSpec) -> bool:
    """True iff every position holds a grammar-admissible token.

    The marker slot fixes the family the body slots are checked against; a
    non-marker there fails. Empty sequences are vacuously valid.
    """
    toks = [int(t) for t in tokens]
    length = len(toks)
    if length == 0:
        return True
    family: int | None = None
    if length >= 3:
        if toks[2] not in spec.markers:
            return False
        family = spec.family_of(toks[2])
    for slot, tok in enumerate(toks):
        if tok not in spec.admissible(slot, length, family):
            return False
    return True


class ToyModel:
    """Seeded synthetic denoiser over a small vocabulary.

    Vocabulary layout: mask, three structural tokens, the family markers,
    a prompt-token pool, per-family word pools, and inert filler. The
    codebook rows are unit-norm; the context head maps pooled conditioning
    to per-token scores, with family-marker columns scaled up so marker
    margins sit in the flippable range while everything else stays tame.
    """

    def __init__(
        self,
        seed: int = 0,
        vocab_size: int = 128,
        embed_dim: int = 32,
        n_families: int = 4,
        pool_size: int = 18,
        prompt_pool_size: int = 8,
        marker_scale: float = 40.0,
        base_scale: float = 6.0,
        bonus: float = 120.0,
    ):
        needed = 4 + n_families + prompt_pool_size + n_families * pool_size
        if vocab_size < needed:
            raise ValueError(f"vocab_size {vocab_size} too small for layout ({needed} needed)")
        self.seed = seed
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.bonus = bonus
        self.mask_id = 0

        first_marker = 4
        first_prompt = first_marker + n_families
        first_pool = first_prompt + prompt_pool_size
        self.prompt_pool = tuple(range(first_prompt, first_pool))
        markers = tuple(range(first_marker, first_marker + n_families))
        pools = tuple(
            tuple(range(first_pool + f * pool_size, first_pool + (f + 1) * pool_size))
            for f in range(n_families)
        )
        self.grammar = GrammarSpec(
            neutral_a=1,
            neutral_b=2,
            closer=3,
            markers=markers,
            pools=pools,
            choice_seed=splitmix64(seed ^ 0xA5A5_A5A5),
        )

        rng = RngState(splitmix64(seed))
        book = gaussian_matrix(rng, vocab_size, embed_dim)
        self.codebook = book / np.linalg.norm(book, axis=1, keepdims=True)
        head = gaussian_matrix(rng, embed_dim, vocab_size) * base_scale
        head[:, list(markers)] *= marker_scale / base_scale
        self.context_map = head

        self._families = np.full(vocab_size, -1, dtype=np.int64)
        for f, marker in enumerate(markers):
            self._families[marker] = f
            self._families[list(pools[f])] = f
        self._words = self._make_words(seed)

    def _make_words(self, seed: int) -> list[str]:
        words: list[str] = []
        seen: set[str] = set()
        for tok in range(self.vocab_size):
            h = splitmix64(seed * 0x10001 + tok)
            while True:
                n_syll = 2 + (h & 1)
                chars = []
                x = h
                for _ in range(n_syll):
                    x = splitmix64(x)
                    chars.append(_CONSONANTS[x % len(_CONSONANTS)])
                    x = splitmix64(x)
                    chars.append(_VOWELS[x % len(_VOWELS)])
                word = "".join(chars)
                if word not in seen:
                    break
                h = splitmix64(h)
            seen.add(word)
            words.append(word)
        return words

    # -- DenoiserInterface ------------------------------------------------

    def embed(self, tokens) -> np.ndarray:
        """Look up codebook rows; one unit-norm row per token."""
        toks = np.asarray(tokens, dtype=np.int64)
        if toks.size and (toks.min() < 0 or toks.max() >= self.vocab_size):
            raise ValueError("token id outside vocabulary")
        return self.codebook[toks].copy()

    def logits(self, tokens, e_cond: np.ndarray) -> np.ndarray:
        """Score every position given pooled conditioning.

        The conditioning rows define the prompt region; remaining positions
        form the generated region and get the grammar bonus on their
        admissible sets (restricted to the committed family once one
        exists). Finalized positions return spiked logits on their own
        token so reruns reproduce them.
        """
        toks = np.asarray(tokens, dtype=np.int64)
        e_cond = np.asarray(e_cond, dtype=np.float64)
        prompt_len = e_cond.shape[0]
        if toks.size < prompt_len:
            raise ValueError("sequence shorter than its conditioning")
        pooled = e_cond.mean(axis=0)
        base = pooled @ self.context_map
        gen = toks[prompt_len:]
        gen_len = gen.size
        family = self.grammar.committed_family(gen, self.mask_id)

        out = np.tile(base, (toks.size, 1))
        for pos, tok in enumerate(toks):
            if tok != self.mask_id:
                row = np.zeros(self.vocab_size)
                row[tok] = 1e4
                out[pos] = row
            elif pos >= prompt_len:
                slot = pos - prompt_len
                out[pos, list(self.grammar.admissible(slot, gen_len, family))] += self.bonus
        return out

    # -- experiment helpers ------------------------------------------------

    def branch_prompts(self, n: int, length: int = 6) -> list[np.ndarray]:
        """n seeded prompts drawn from the prompt-token pool."""
        if n < 1 or length < 1:
            raise ValueError("need at least one prompt of at least one token")
        prompts = []
        for i in range(n):
            rng = RngState(splitmix64(self.seed ^ (0xBEEF + i)))
            gen = rng._next_generator()
            idx = gen.integers(0, len(self.prompt_pool), size=length)
            prompts.append(np.array([self.prompt_pool[j] for j in idx], dtype=np.int64))
        return prompts

    def family_of_output(self, gen_tokens) -> int | None:
        """Family indicated by the marker slot of a finished generation."""
        toks = [int(t) for t in gen_tokens]
        if len(toks) < 3:
            return None
        fam = self.grammar.family_of(toks[2])
        if fam is not None and toks[2] in self.grammar.markers:
            return fam
        return None

    def detokenize(self, tokens) -> str:
        return " ".join(self._words[int(t)] for t in tokens)

    def to_config(self) -> dict:
        return {
            "seed": self.seed,
            "vocab_size": self.vocab_size,
            "embed_dim": self.embed_dim,
            "n_families": self.grammar.n_families,
            "pool_size": len(self.grammar.pools[0]),
            "prompt_pool_size": len(self.prompt_pool),
            "bonus": self.bonus,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "ToyModel":
        return cls(**cfg)
