"""End-to-end acceptance gate: one test per shipped guarantee.

Run with `pytest tests/test_acceptance.py -v` to get one pass/fail line
per criterion. Each test is self-contained and uses fixed seeds; the
timed criteria assert their own wall-clock budgets.
"""

from __future__ import annotations

import json
import time

import numpy as np
import pytest

from reference_impls import (
    ref_distinct,
    ref_ead,
    ref_embed_div,
    ref_min_p,
    ref_self_bleu,
    ref_top_k,
    ref_top_p,
)
from taps.decoder import (
    GenerationConfig,
    SamplerSpec,
    candidate_set,
    generate,
    transfer_counts,
)
from taps.harness import (
    FilterPolicy,
    MethodSpec,
    PromptSpec,
    derive_seed,
    evaluate_run,
    majority_vote,
    read_manifest,
    run_experiment,
    vote_run,
)
from taps.metrics import (
    HashedNgramEmbedder,
    SampleSet,
    distinct_n,
    div_bleu,
    ead,
    embed_diversity,
    global_ngram_vocab,
    self_bleu,
    tokenize,
)
from taps.numcore import RngState, row_norms, stats
from taps.perturb import TapsConfig, rescale_stats, taps_step
from taps.schedule import AnnealSpec, NoiseWindow, sigma_at
from taps.toy_denoiser import ToyModel, validity


def _taps(sigma=0.2, psi=0.9, window=(0.9, 0.3), kind="cosine", **kw) -> TapsConfig:
    return TapsConfig(
        window=NoiseWindow(*window),
        anneal=AnnealSpec(kind=kind, sigma_max=sigma),
        psi=psi,
        **kw,
    )


# -- criterion 1: pipeline identity ------------------------------------------


def test_criterion_01_pipeline_identity():
    t0 = time.monotonic()
    gen = np.random.default_rng(101)
    cfg = _taps(sigma=0.2, psi=0.9, window=(0.7, 0.3))

    # outside the injection window the step is a bit-exact identity
    E = gen.normal(size=(6, 16))
    for tau in (1.0, 0.9, 0.71, 0.29, 0.1, 0.0):
        out = taps_step(E, tau, cfg, RngState(1))
        assert out is E  # the very same array, no copy, no draw

    # psi = 0 keeps the output within relative 1e-6 of the clean input
    cfg0 = _taps(sigma=0.2, psi=0.0, window=(0.7, 0.3))
    for seed in range(20):
        E = np.random.default_rng(seed).normal(size=(5, 12))
        out = taps_step(E, 0.5, cfg0, RngState(seed))
        assert np.allclose(out, E, rtol=1e-6, atol=0.0)

    # a zero noise peak decodes bit-identically to no noise config at all
    model = ToyModel(seed=0)
    prompt = model.branch_prompts(1)[0]
    gcfg = GenerationConfig(
        gen_length=16, block_length=8, total_steps=16, mask_id=0, temperature=1.0
    )
    trace_off, trace_zero = [], []
    out_off = generate(prompt, model, gcfg, None, RngState(77), trace_off.append)
    out_zero = generate(
        prompt, model, gcfg, _taps(sigma=0.0), RngState(77), trace_zero.append
    )
    assert np.array_equal(out_off, out_zero)
    assert len(trace_off) == len(trace_zero)
    for a, b in zip(trace_off, trace_zero):
        assert np.array_equal(a.tokens, b.tokens)
        assert a.finalized == b.finalized

    assert time.monotonic() - t0 < 1.0


# -- criterion 2: norm preservation --------------------------------------------


def test_criterion_02_norm_preservation():
    t0 = time.monotonic()
    gen = np.random.default_rng(202)
    for trial in range(1000):
        rows = int(gen.integers(1, 9))
        cols = int(gen.integers(2, 17))
        E = gen.normal(size=(rows, cols))
        cfg = _taps(
            sigma=float(gen.uniform(0.05, 1.5)),
            psi=float(gen.uniform(0.0, 1.0)),
            window=(0.9, 0.1),
            kind="cosine" if trial % 2 else "linear",
        )
        out = taps_step(E, 0.5, cfg, RngState(trial))
        assert np.allclose(row_norms(out), row_norms(E), rtol=1e-6, atol=0.0)
    assert time.monotonic() - t0 < 5.0


# -- criterion 3: rescale contract ----------------------------------------------


def test_criterion_03_rescale_contract():
    gen = np.random.default_rng(303)
    for trial in range(1000):
        rows = int(gen.integers(2, 8))
        cols = int(gen.integers(2, 12))
        E = gen.normal(loc=gen.uniform(-2, 2), scale=gen.uniform(0.5, 3.0), size=(rows, cols))

        # moment restoration: rescaled noisy input recovers the clean stats
        noisy = E + gen.uniform(0.05, 1.0) * gen.normal(size=E.shape)
        m, s = stats(rescale_stats(noisy, E))
        m0, s0 = stats(E)
        assert abs(m - m0) < 1e-6 and abs(s - s0) < 1e-6

        # affine invariance: a positive rescaling plus shift is undone exactly
        a = float(gen.uniform(0.1, 10.0))
        b = float(gen.uniform(-5.0, 5.0))
        back = rescale_stats(a * E + b, E)
        assert np.max(np.abs(back - E)) < 1e-9


# -- criterion 4: annealing schedule ---------------------------------------------


def test_criterion_04_schedule():
    for start, end in ((1.0, 0.0), (0.9, 0.3), (0.8, 0.25)):
        window = NoiseWindow(start, end)
        for kind in ("cosine", "linear"):
            for sigma_max in (0.2, 1.0):
                spec = AnnealSpec(kind=kind, sigma_max=sigma_max)
                assert sigma_at(start, window, spec) == sigma_max  # exact
                assert sigma_at(end, window, spec) == 0.0  # exact
                grid = np.linspace(start, end, 1000)
                vals = np.array([sigma_at(float(t), window, spec) for t in grid])
                assert np.all(np.diff(vals) <= 0.0)  # monotone non-increase
        mid = (start + end) / 2.0
        got = sigma_at(mid, window, AnnealSpec(kind="cosine", sigma_max=1.0))
        assert abs(got - 0.5) < 1e-12


# -- criterion 5: decoder structure ------------------------------------------------


def test_criterion_05_decoder_structure():
    model = ToyModel(seed=0)
    prompts = model.branch_prompts(10)
    gen = np.random.default_rng(50505)

    for trial in range(200):
        B = int(gen.choice([2, 4, 8]))
        n_blocks = int(gen.integers(1, 4))
        L = B * n_blocks
        S = int(gen.integers(n_blocks, 3 * n_blocks + 1))
        sampler = SamplerSpec()
        pick = int(gen.integers(0, 4))
        if pick == 1:
            sampler = SamplerSpec(kind="top_k", k=int(gen.integers(1, 11)))
        elif pick == 2:
            sampler = SamplerSpec(kind="top_p", p=float(gen.uniform(0.05, 1.0)))
        elif pick == 3:
            sampler = SamplerSpec(kind="min_p", p_base=float(gen.uniform(0.01, 1.0)))
        gcfg = GenerationConfig(
            gen_length=L,
            block_length=B,
            total_steps=S,
            mask_id=0,
            temperature=float(gen.choice([0.0, 0.5, 1.0])),
            remask=str(gen.choice(["low_confidence", "low_confidence_dynamic"])),
            conf_threshold=float(gen.uniform(0.3, 0.99)),
            sampler=sampler,
        )
        tcfg = None
        if gen.integers(0, 2):
            start = float(gen.uniform(0.5, 1.0))
            end = float(gen.uniform(0.0, start - 0.1))
            tcfg = _taps(
                sigma=float(gen.uniform(0.0, 1.0)),
                psi=float(gen.uniform(0.0, 1.0)),
                window=(start, end),
                kind=str(gen.choice(["cosine", "linear"])),
                mode=str(gen.choice(["embedding", "token_mask"])),
                mask_rate=float(gen.uniform(0.02, 0.3)),
            )
        prompt = prompts[trial % len(prompts)]

        traces = []
        out = generate(prompt, model, gcfg, tcfg, RngState(trial), traces.append)

        assert not np.any(out == gcfg.mask_id)  # (a) nothing left masked
        assert np.array_equal(out[: prompt.size], prompt)  # (b) prompt intact

        finalized_per_block: dict[int, int] = {}
        seen_blocks: list[int] = []
        for tr in traces:
            finalized_per_block[tr.block] = finalized_per_block.get(tr.block, 0) + len(
                tr.finalized
            )
            if not seen_blocks or tr.block != seen_blocks[-1]:
                seen_blocks.append(tr.block)
            # (d) every earlier block is fully decoded in this snapshot
            upto = prompt.size + tr.block * B
            assert not np.any(tr.tokens[prompt.size : upto] == gcfg.mask_id)
        assert seen_blocks == sorted(set(seen_blocks))  # blocks strictly in order
        assert all(count == B for count in finalized_per_block.values())  # (c)

    # transfer quotas themselves always partition the block exactly
    for B, S_b in ((5, 2), (128, 256), (8, 3), (16, 16)):
        assert sum(transfer_counts(B, S_b)) == B

    # sampler truncation equals the brute-force oracle on random 10-way rows
    for trial in range(10_000):
        probs = gen.dirichlet(np.full(10, 0.5))
        pick = trial % 3
        if pick == 0:
            k = int(gen.integers(1, 11))
            got = candidate_set(probs, SamplerSpec(kind="top_k", k=k))
            want = ref_top_k(probs.tolist(), k)
        elif pick == 1:
            p = float(gen.uniform(0.05, 1.0))
            got = candidate_set(probs, SamplerSpec(kind="top_p", p=p))
            want = ref_top_p(probs.tolist(), p)
        else:
            p_base = float(gen.uniform(0.01, 1.0))
            got = candidate_set(probs, SamplerSpec(kind="min_p", p_base=p_base))
            want = ref_min_p(probs.tolist(), p_base)
        assert set(np.flatnonzero(np.atleast_2d(got)[0]).tolist()) == want


# -- criterion 6: metric oracle equivalence ----------------------------------------


def test_criterion_06_metric_oracles():
    gen = np.random.default_rng(606)
    words = ["red", "blue", "green", "gold", "iron", "clay", "moss", "sand"]
    embedder = HashedNgramEmbedder()

    for _ in range(500):
        n_samples = int(gen.integers(2, 6))
        texts = [
            " ".join(words[i] for i in gen.integers(0, len(words), size=gen.integers(1, 31)))
            for _ in range(n_samples)
        ]
        token_lists = [tokenize(t) for t in texts]
        sample_set = SampleSet("t", tuple(texts))

        n = int(gen.integers(1, 4))
        for toks in token_lists:
            assert distinct_n(toks, n) == ref_distinct(toks, n)

        assert self_bleu(sample_set) == pytest.approx(
            ref_self_bleu(token_lists), rel=1e-12
        )

        vocab = global_ngram_vocab(texts)
        assert ead(sample_set, vocab) == pytest.approx(
            ref_ead(token_lists, vocab), rel=1e-12
        )

        vectors = embedder.embed_batch(texts)
        assert embed_diversity(sample_set, embedder) == pytest.approx(
            ref_embed_div(vectors.tolist()), rel=1e-9, abs=1e-9
        )

    # anchors: identical samples have zero lexical and semantic diversity
    same = SampleSet("a", ("north wind and sun", "north wind and sun"))
    assert div_bleu(same) == 0.0
    assert embed_diversity(same, embedder) == pytest.approx(0.0, abs=1e-9)

    # spot value: two texts, two distinct unigrams, global vocabulary of two
    # -> observed 2 over expected 2*(1 - (1/2)^2) = 3/2, a ratio of 4/3
    spot = SampleSet("b", ("a", "b"))
    assert ead(spot, {1: 2}) == pytest.approx(100.0 * 4.0 / 3.0, rel=1e-12)

    # the expectation adjustment may legitimately exceed 100
    wide = SampleSet("c", ("a b c", "d e f"))
    assert ead(wide, global_ngram_vocab(["a b c", "d e f"])) > 100.0


# -- criteria 7 and 8: behavioral effect on the toy model ---------------------------


def _decode_grid(model, prompts, method_cfgs, gcfg, root_seed, samples):
    """Decode every (method, prompt, sample) cell; returns generated regions."""
    outs: dict[tuple[str, int], list[np.ndarray]] = {}
    for name, tcfg in method_cfgs.items():
        for pi, prompt in enumerate(prompts):
            gens = []
            for s in range(samples):
                seed = derive_seed(root_seed, f"p{pi:03d}", name, s)
                full = generate(prompt, model, gcfg, tcfg, RngState(seed))
                gens.append(full[prompt.size :])
            outs[(name, pi)] = gens
    return outs


def _family_count(model, gens) -> int:
    fams = {model.family_of_output(g) for g in gens}
    return len(fams - {None})


def _mean_embed_div(model, outs, name, n_prompts) -> float:
    embedder = HashedNgramEmbedder()
    vals = []
    for pi in range(n_prompts):
        texts = tuple(model.detokenize(g) for g in outs[(name, pi)])
        vals.append(embed_diversity(SampleSet(f"p{pi}", texts), embedder))
    return float(np.mean(vals))


def _validity_rate(model, outs, name, n_prompts) -> float:
    flags = []
    for pi in range(n_prompts):
        flags.extend(validity(g, model.grammar) for g in outs[(name, pi)])
    return float(np.mean(flags))


def test_criterion_07_toy_diversity_effect():
    t0 = time.monotonic()
    model = ToyModel(seed=0)
    prompts = model.branch_prompts(20)
    gcfg = GenerationConfig(
        gen_length=16, block_length=16, total_steps=16, mask_id=0, temperature=1.0
    )
    methods = {"base": None, "taps": _taps(sigma=0.2, psi=0.9, window=(0.9, 0.3))}
    outs = _decode_grid(model, prompts, methods, gcfg, root_seed=4242, samples=10)

    base_fams = float(np.mean([_family_count(model, outs[("base", pi)]) for pi in range(20)]))
    taps_fams = float(np.mean([_family_count(model, outs[("taps", pi)]) for pi in range(20)]))
    assert taps_fams > base_fams  # (a) strictly more branch families reached

    base_div = _mean_embed_div(model, outs, "base", 20)
    taps_div = _mean_embed_div(model, outs, "taps", 20)
    assert taps_div - base_div >= 10.0  # (b) at least ten points higher

    base_valid = _validity_rate(model, outs, "base", 20)
    taps_valid = _validity_rate(model, outs, "taps", 20)
    assert taps_valid >= 0.9 * base_valid  # (c) validity survives the noise

    assert time.monotonic() - t0 < 120.0


def test_criterion_08_window_ablation_direction():
    t0 = time.monotonic()
    model = ToyModel(seed=0)
    prompts = model.branch_prompts(10)
    gcfg = GenerationConfig(
        gen_length=16, block_length=16, total_steps=16, mask_id=0, temperature=1.0
    )
    methods = {
        "early": _taps(sigma=0.2, psi=0.9, window=(0.9, 0.3)),
        "late": _taps(sigma=0.2, psi=0.9, window=(0.5, 0.1)),
    }
    wins = 0
    for root_seed in (11, 22, 33, 44, 55):
        outs = _decode_grid(model, prompts, methods, gcfg, root_seed, samples=8)
        early = _mean_embed_div(model, outs, "early", 10)
        late = _mean_embed_div(model, outs, "late", 10)
        wins += int(early > late)
    assert wins >= 3  # early-window noise wins on a majority of root seeds
    assert time.monotonic() - t0 < 300.0


# -- criterion 9: majority vote on recorded answer lists ------------------------------


def test_criterion_09_majority_vote_fixtures():
    # ten identical answers: unanimous winner, perfect per-sample accuracy
    winner, acc = majority_vote(["294"] * 10, gold="294")
    assert winner == "294" and acc == 1.0

    # mixed list where the modal answer is right; four of the ten recorded
    # answers equal the gold value, so the per-sample rate is 0.4
    answers = ["13", "232", "4", "30", "11000", "4", "4", "8", "4", "5"]
    winner, acc = majority_vote(answers, gold="4")
    assert winner == "4" and acc == 0.4

    # all-singleton list: earliest answer wins the tie and is wrong, and
    # two samples produced no parseable answer at all
    answers = ["50", "4.5", "4.8", "6", "8", "5", "13", "4", None, None]
    winner, acc = majority_vote(answers, gold="4")
    assert winner == "50" and acc == 0.1


# -- criterion 10: end-to-end determinism ----------------------------------------------


def test_criterion_10_run_determinism(tmp_path):
    model = ToyModel(seed=0)
    prompts = [
        PromptSpec(f"p{i:03d}", tuple(int(t) for t in toks), gold="7")
        for i, toks in enumerate(model.branch_prompts(3))
    ]
    methods = [MethodSpec("base"), MethodSpec("taps", taps=_taps())]
    gcfg = GenerationConfig(
        gen_length=16, block_length=16, total_steps=16, mask_id=0, temperature=1.0
    )
    policy = FilterPolicy(min_chars=1, top_n=12)

    dirs = []
    for label in ("first", "second"):
        run = run_experiment(
            model, prompts, methods, gcfg, 2026, tmp_path / label, samples_per_prompt=4
        )
        evaluate_run(run, policy=policy)
        vote_run(run)
        dirs.append(run)

    a, b = dirs
    for rel in ("records.jsonl", "metrics.jsonl", "report.txt", "vote.jsonl", "vote.txt"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
    assert (a / "figures" / "metrics.png").read_bytes() == (
        b / "figures" / "metrics.png"
    ).read_bytes()

    ma = read_manifest(a)
    mb = read_manifest(b)
    ma.pop("created")
    mb.pop("created")
    assert ma == mb
    assert json.dumps(ma, sort_keys=True) == json.dumps(mb, sort_keys=True)
