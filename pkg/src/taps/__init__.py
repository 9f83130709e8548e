"""Time-annealed perturbation sampling for masked-diffusion decoding."""

from .decoder import (
    DecodeError,
    DenoiserInterface,
    GenerationConfig,
    SamplerSpec,
    StepTrace,
    generate,
    plan_blocks,
    sample_tokens,
    transfer_counts,
)
from .harness import (
    FilterPolicy,
    MethodSpec,
    PromptSpec,
    clean_text,
    derive_seed,
    evaluate_run,
    extract_answer,
    filter_samples,
    majority_vote,
    run_experiment,
    vote_run,
)
from .metrics import (
    EmbeddingUnavailable,
    HashedNgramEmbedder,
    RemoteEmbedder,
    SampleSet,
    div_bleu,
    ead,
    embed_diversity,
    intra_distinct,
    tokenize,
)
from .numcore import RngState, splitmix64
from .perturb import DegenerateInputError, TapsConfig, taps_step
from .schedule import AnnealSpec, NoiseWindow, diffusion_time, in_window, sigma_at
from .toy_denoiser import GrammarSpec, ToyModel, validity

__version__ = "0.1.0"

__all__ = [
    "AnnealSpec",
    "DecodeError",
    "DegenerateInputError",
    "DenoiserInterface",
    "EmbeddingUnavailable",
    "FilterPolicy",
    "GenerationConfig",
    "GrammarSpec",
    "HashedNgramEmbedder",
    "MethodSpec",
    "NoiseWindow",
    "PromptSpec",
    "RemoteEmbedder",
    "RngState",
    "SampleSet",
    "SamplerSpec",
    "StepTrace",
    "TapsConfig",
    "ToyModel",
    "clean_text",
    "derive_seed",
    "diffusion_time",
    "div_bleu",
    "ead",
    "embed_diversity",
    "evaluate_run",
    "extract_answer",
    "filter_samples",
    "generate",
    "in_window",
    "intra_distinct",
    "majority_vote",
    "plan_blocks",
    "run_experiment",
    "sample_tokens",
    "sigma_at",
    "splitmix64",
    "taps_step",
    "tokenize",
    "transfer_counts",
    "validity",
    "vote_run",
    "__version__",
]
