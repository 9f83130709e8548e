"""Conditioning perturbation: annealed Gaussian noise on context embeddings.

The pipeline runs inject -> rescale -> psi-mix -> norm-project, in that
order. Rescaling matches the perturbed matrix's global mean/std back to the
original's, the psi-mix pulls the result toward the clean embeddings, and
the projection restores every row to its original Euclidean norm. Outside
the injection window the whole step is the identity and consumes no
randomness, so noise-free configurations replay bit-identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import RngState, gaussian_matrix, row_norms, stats
from .schedule import AnnealSpec, NoiseWindow, in_window, sigma_at

PERTURB_MODES = ("embedding", "token_mask")


class DegenerateInputError(ValueError):
    """Raised when a constant perturbed matrix cannot be standardized."""


@dataclass(frozen=True)
class TapsConfig:
    """Perturbation settings: window, decay, mix strength, and mode.

    psi = 1 applies the rescaled noisy embeddings as-is, psi = 0 keeps the
    clean ones. token_mask mode replaces embedding noise with random prompt
    masking at a rate that follows the same annealed decay.
    """

    window: NoiseWindow
    anneal: AnnealSpec
    psi: float = 0.9
    epsilon: float = 1e-8
    mode: str = "embedding"
    mask_rate: float = 0.05

    def __post_init__(self) -> None:
        if not (0.0 <= self.psi <= 1.0):
            raise ValueError(f"psi must be in [0, 1], got {self.psi}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.mode not in PERTURB_MODES:
            raise ValueError(f"mode must be one of {PERTURB_MODES}, got {self.mode!r}")
        if not (0.0 <= self.mask_rate <= 1.0):
            raise ValueError(f"mask_rate must be in [0, 1], got {self.mask_rate}")


def inject_noise(E: np.ndarray, sigma: float, rng: RngState) -> np.ndarray:
    """E + sigma * G with G standard normal of matching shape."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    E = np.asarray(E, dtype=np.float64)
    noise = gaussian_matrix(rng, E.shape[0], E.shape[1])
    return E + sigma * noise


def rescale_stats(E_tilde: np.ndarray, E: np.ndarray) -> np.ndarray:
    """Standardize E_tilde, then restore the global mean/std of E.

    Moments are taken over all entries (rows and columns together), not
    per row or per column.
    """
    E_tilde = np.asarray(E_tilde, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    if E_tilde.shape != E.shape:
        raise ValueError(f"shape mismatch: {E_tilde.shape} vs {E.shape}")
    mean_t, std_t = stats(E_tilde)
    # a constant matrix can round-trip to a tiny nonzero std, so check both
    if std_t == 0.0 or np.all(E_tilde == E_tilde.ravel()[0]):
        raise DegenerateInputError("perturbed matrix is constant; cannot standardize")
    mean_o, std_o = stats(E)
    return (E_tilde - mean_t) / std_t * std_o + mean_o


def psi_mix(E_prime: np.ndarray, E: np.ndarray, psi: float) -> np.ndarray:
    """Convex combination psi * E_prime + (1 - psi) * E, elementwise."""
    if not (0.0 <= psi <= 1.0):
        raise ValueError(f"psi must be in [0, 1], got {psi}")
    E_prime = np.asarray(E_prime, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    if E_prime.shape != E.shape:
        raise ValueError(f"shape mismatch: {E_prime.shape} vs {E.shape}")
    if psi == 0.0:
        return E.copy()
    if psi == 1.0:
        return E_prime.copy()
    return psi * E_prime + (1.0 - psi) * E


def norm_project(E_hat: np.ndarray, E: np.ndarray, epsilon: float) -> np.ndarray:
    """Rescale each row of E_hat to the Euclidean norm of the matching row of E.

    Directions are preserved; epsilon softens the division so zero rows map
    to zero rows instead of dividing by zero.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    E_hat = np.asarray(E_hat, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    if E_hat.shape != E.shape:
        raise ValueError(f"shape mismatch: {E_hat.shape} vs {E.shape}")
    scale = row_norms(E) / (row_norms(E_hat) + epsilon)
    return E_hat * scale[:, np.newaxis]


def taps_step(E: np.ndarray, tau: float, cfg: TapsConfig, rng: RngState) -> np.ndarray:
    """One perturbation step at diffusion time tau.

    Returns E untouched (and consumes no randomness) when tau is outside
    the window, the annealed scale has decayed to zero, or the config is in
    token_mask mode; otherwise runs the full pipeline.
    """
    if not (0.0 <= tau <= 1.0):
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    if cfg.mode != "embedding" or not in_window(tau, cfg.window):
        return E
    sigma = sigma_at(tau, cfg.window, cfg.anneal)
    if sigma <= 0.0:
        return E
    E_tilde = inject_noise(E, sigma, rng)
    E_prime = rescale_stats(E_tilde, E)
    E_hat = psi_mix(E_prime, E, cfg.psi)
    return norm_project(E_hat, E, cfg.epsilon)


def token_mask_perturb(
    prompt_tokens: np.ndarray,
    tau: float,
    cfg: TapsConfig,
    mask_id: int,
    rng: RngState,
) -> np.ndarray:
    """Randomly mask prompt tokens at an annealed rate; the token-level variant.

    Each prompt position is independently replaced by mask_id with
    probability mask_rate * (sigma(tau) / sigma_max), so masking decays
    through the window exactly like the embedding noise. Masks are drawn
    fresh at every step. Outside the window (or at zero rate) the prompt
    comes back unchanged and no randomness is consumed.
    """
    if cfg.mode != "token_mask":
        raise ValueError(f"token_mask_perturb requires token_mask mode, got {cfg.mode!r}")
    if not (0.0 <= tau <= 1.0):
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    tokens = np.asarray(prompt_tokens, dtype=np.int64).copy()
    if tokens.size == 0:
        return tokens
    if not in_window(tau, cfg.window):
        return tokens
    sigma_max = cfg.anneal.sigma_max
    if sigma_max <= 0.0:
        return tokens
    p_mask = cfg.mask_rate * (sigma_at(tau, cfg.window, cfg.anneal) / sigma_max)
    if p_mask <= 0.0:
        return tokens
    gen = rng._next_generator()
    hit = gen.random(tokens.size) < p_mask
    tokens[hit] = mask_id
    return tokens
