"""Experiment harness: runs method matrices and scores the results.

A run directory holds manifest.json (everything needed to reproduce the
run; the creation timestamp is isolated to one key), records.jsonl (one
generation per line), and after evaluation metrics.jsonl, report.txt and
figures/. All JSON is written with sorted keys so reruns are
byte-identical.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .decoder import GenerationConfig, SamplerSpec, generate
from .metrics import (
    EmbeddingProvider,
    EmbeddingUnavailable,
    HashedNgramEmbedder,
    SampleSet,
    div_bleu,
    ead,
    embed_diversity,
    global_ngram_vocab,
    intra_distinct,
)
from .numcore import splitmix64
from .perturb import TapsConfig

SCHEMA_VERSION = 1

_PIPE_SPAN_RE = re.compile(r"<\|.*?\|>")
_SHORT_TAG_RE = re.compile(r"<[^<>]{1,18}>")
_NUM_RE = re.compile(r"-?\$?\s?\d[\d,]*(?:\.\d+)?")
_MARKER_RE = re.compile(r"the answer is[:\s]*(-?\$?\s?\d[\d,]*(?:\.\d+)?)", re.IGNORECASE)
_BOXED_RE = re.compile(r"\\boxed\{([^{}]*)\}")


# ---------------------------------------------------------------------------
# text cleaning and sample filtering


def clean_text(raw: str) -> str:
    """Strip <|...|> spans and short tag-like markup, collapse whitespace."""
    t = _PIPE_SPAN_RE.sub(" ", raw)
    t = _SHORT_TAG_RE.sub(" ", t)
    return " ".join(t.split())


@dataclass(frozen=True)
class FilterPolicy:
    """Which generations survive into a prompt's sample set."""

    min_chars: int = 50
    top_n: int = 12

    def __post_init__(self) -> None:
        if self.min_chars < 0 or self.top_n < 2:
            raise ValueError("min_chars must be >= 0 and top_n >= 2")


def filter_samples(prompt_id: str, raw_texts: Sequence[str], policy: FilterPolicy) -> SampleSet | None:
    """Clean, drop short texts, keep the top_n longest; None if < 2 remain.

    Length ties are broken toward the earlier sample index, and kept texts
    stay in sample order.
    """
    cleaned = [(i, clean_text(t)) for i, t in enumerate(raw_texts)]
    eligible = [(i, t) for i, t in cleaned if len(t) >= policy.min_chars]
    eligible.sort(key=lambda item: (-len(item[1]), item[0]))
    kept = sorted(eligible[: policy.top_n], key=lambda item: item[0])
    if len(kept) < 2:
        return None
    return SampleSet(prompt_id=prompt_id, texts=tuple(t for _, t in kept))


# ---------------------------------------------------------------------------
# answer extraction and voting


def canonical_number(raw: str) -> str | None:
    """Normalize a numeric string: strip $/commas/space, trim trailing zeros."""
    s = raw.replace("$", "").replace(",", "").strip().rstrip(".")
    if s.startswith("."):
        s = "0" + s
    elif s.startswith("-."):
        s = "-0" + s[1:]
    if not re.fullmatch(r"-?\d+(?:\.\d+)?", s):
        return None
    if "." in s:
        s = s.rstrip("0").rstrip(".")
    return s


def extract_answer(text: str) -> str | None:
    """Pull the final numeric answer out of a generation, if any.

    Preference order: the last 'The answer is <number>' marker, then the
    last \\boxed{} containing a number, then the last bare number in the
    text. Units and currency around the number are dropped.
    """
    markers = list(_MARKER_RE.finditer(text))
    if markers:
        return canonical_number(markers[-1].group(1))
    for boxed in reversed(list(_BOXED_RE.finditer(text))):
        inner = list(_NUM_RE.finditer(boxed.group(1)))
        if inner:
            return canonical_number(inner[-1].group(0))
    tail = list(_NUM_RE.finditer(text))
    if tail:
        return canonical_number(tail[-1].group(0))
    return None


def majority_vote(answers: Sequence[str | None], gold: str | None = None) -> tuple[str | None, float | None]:
    """Most frequent non-None answer (ties to earliest), plus accuracy.

    Accuracy is the fraction of individual answers matching the gold value
    (missing answers count as wrong); None when no gold is given.
    """
    tally: dict[str, list[int]] = {}
    for i, a in enumerate(answers):
        if a is None:
            continue
        if a not in tally:
            tally[a] = [0, i]
        tally[a][0] += 1
    winner = None
    if tally:
        winner = max(tally.items(), key=lambda kv: (kv[1][0], -kv[1][1]))[0]
    accuracy = None
    if gold is not None and answers:
        target = canonical_number(gold)
        accuracy = sum(1 for a in answers if a is not None and a == target) / len(answers)
    return winner, accuracy


# ---------------------------------------------------------------------------
# seeding and run bookkeeping


def _string_key(s: str) -> int:
    return int.from_bytes(hashlib.blake2b(s.encode("utf-8"), digest_size=8).digest(), "little")


def derive_seed(root_seed: int, *parts: str | int) -> int:
    """Mix a root seed with string/int parts into one decode seed.

    Each (prompt, method, sample) triple gets an independent seed, so
    adding a method or more samples never shifts anyone else's stream.
    """
    h = root_seed & 0xFFFFFFFFFFFFFFFF
    for part in parts:
        key = _string_key(part) if isinstance(part, str) else int(part)
        h = splitmix64(h ^ (key & 0xFFFFFFFFFFFFFFFF))
    return h


@dataclass(frozen=True)
class PromptSpec:
    """One evaluation prompt: id, prompt tokens, optional gold answer."""

    prompt_id: str
    tokens: tuple[int, ...]
    gold: str | None = None


@dataclass(frozen=True)
class MethodSpec:
    """A decoding method: a name plus optional overrides on the base config."""

    name: str
    taps: TapsConfig | None = None
    temperature: float | None = None
    sampler: SamplerSpec | None = None

    def resolve(self, gcfg: GenerationConfig) -> GenerationConfig:
        changes = {}
        if self.temperature is not None:
            changes["temperature"] = self.temperature
        if self.sampler is not None:
            changes["sampler"] = self.sampler
        return dataclasses.replace(gcfg, **changes) if changes else gcfg


def _json_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True) + "\n"


def run_experiment(
    model,
    prompts: Sequence[PromptSpec],
    methods: Sequence[MethodSpec],
    gcfg: GenerationConfig,
    root_seed: int,
    out_dir: str | Path,
    samples_per_prompt: int = 10,
) -> Path:
    """Decode every (method, prompt, sample) cell and write a run directory."""
    from .numcore import RngState

    if samples_per_prompt < 1:
        raise ValueError("need at least one sample per prompt")
    run = Path(out_dir)
    run.mkdir(parents=True, exist_ok=True)

    prompt_blob = json.dumps(
        [{"id": p.prompt_id, "tokens": list(p.tokens), "gold": p.gold} for p in prompts],
        sort_keys=True,
    )
    manifest = {
        "schema": SCHEMA_VERSION,
        "created": datetime.now(timezone.utc).isoformat(),
        "root_seed": root_seed,
        "samples_per_prompt": samples_per_prompt,
        "model": model.to_config(),
        "generation": dataclasses.asdict(gcfg),
        "methods": [
            {
                "name": m.name,
                "taps": dataclasses.asdict(m.taps) if m.taps is not None else None,
                "temperature": m.temperature,
                "sampler": dataclasses.asdict(m.sampler) if m.sampler is not None else None,
            }
            for m in methods
        ],
        "prompts": json.loads(prompt_blob),
        "prompts_digest": hashlib.blake2b(prompt_blob.encode("utf-8"), digest_size=16).hexdigest(),
    }
    (run / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")

    with open(run / "records.jsonl", "w") as fh:
        for method in methods:
            eff = method.resolve(gcfg)
            for prompt in prompts:
                p_arr = np.asarray(prompt.tokens, dtype=np.int64)
                for s in range(samples_per_prompt):
                    seed = derive_seed(root_seed, prompt.prompt_id, method.name, s)
                    out = generate(p_arr, model, eff, method.taps, RngState(seed))
                    gen = out[p_arr.size :]
                    fh.write(
                        _json_line(
                            {
                                "schema": SCHEMA_VERSION,
                                "method": method.name,
                                "prompt_id": prompt.prompt_id,
                                "sample_index": s,
                                "seed": seed,
                                "tokens": [int(t) for t in gen],
                                "text": model.detokenize(gen),
                            }
                        )
                    )
    return run


def read_records(run_dir: str | Path) -> list[dict]:
    path = Path(run_dir) / "records.jsonl"
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def read_manifest(run_dir: str | Path) -> dict:
    return json.loads((Path(run_dir) / "manifest.json").read_text())


# ---------------------------------------------------------------------------
# evaluation


def _group_records(records: Sequence[dict]) -> dict[str, dict[str, list[dict]]]:
    grouped: dict[str, dict[str, list[dict]]] = {}
    for rec in records:
        grouped.setdefault(rec["method"], {}).setdefault(rec["prompt_id"], []).append(rec)
    for by_prompt in grouped.values():
        for recs in by_prompt.values():
            recs.sort(key=lambda r: r["sample_index"])
    return grouped


def evaluate_run(
    run_dir: str | Path,
    policy: FilterPolicy | None = None,
    provider: EmbeddingProvider | None = None,
    provider_name: str = "hashed-3gram",
) -> Path:
    """Score a run's records and write metrics.jsonl, report.txt, figures/.

    The expectation-adjusted metric's n-gram vocabulary is pooled over
    every kept text in the run (all methods together), so methods are
    calibrated against the same reference vocabulary. If the embedding
    provider fails, that column reports 'unavailable' instead of failing
    the run.
    """
    run = Path(run_dir)
    policy = policy if policy is not None else FilterPolicy()
    provider = provider if provider is not None else HashedNgramEmbedder()
    grouped = _group_records(read_records(run))

    kept_sets: dict[tuple[str, str], SampleSet | None] = {}
    for method, by_prompt in grouped.items():
        for prompt_id, recs in by_prompt.items():
            kept_sets[(method, prompt_id)] = filter_samples(
                prompt_id, [r["text"] for r in recs], policy
            )

    vocab = global_ngram_vocab(
        [t for s in kept_sets.values() if s is not None for t in s.texts]
    )

    rows: list[dict] = []
    embed_ok = True
    for method in sorted(grouped):
        for prompt_id in sorted(grouped[method]):
            sample_set = kept_sets[(method, prompt_id)]
            if sample_set is None:
                rows.append(
                    {
                        "schema": SCHEMA_VERSION,
                        "method": method,
                        "prompt_id": prompt_id,
                        "excluded": True,
                    }
                )
                continue
            emb: float | None
            try:
                emb = embed_diversity(sample_set, provider) if embed_ok else None
            except EmbeddingUnavailable:
                embed_ok = False
                emb = None
            rows.append(
                {
                    "schema": SCHEMA_VERSION,
                    "method": method,
                    "prompt_id": prompt_id,
                    "excluded": False,
                    "n_kept": len(sample_set.texts),
                    "intra_distinct": round(intra_distinct(sample_set), 6),
                    "div_bleu": round(div_bleu(sample_set), 6),
                    "ead": round(ead(sample_set, vocab), 6),
                    "embed_diversity": round(emb, 6) if emb is not None else None,
                }
            )

    if not embed_ok:
        for row in rows:
            if not row["excluded"]:
                row["embed_diversity"] = None

    with open(run / "metrics.jsonl", "w") as fh:
        for row in rows:
            fh.write(_json_line(row))

    summary = summarize_metrics(rows)
    report = _format_report(summary, provider_name, embed_ok)
    (run / "report.txt").write_text(report)
    _render_metric_figure(summary, run / "figures" / "metrics.png")
    return run / "report.txt"


_METRIC_COLS = ("intra_distinct", "div_bleu", "ead", "embed_diversity")


def summarize_metrics(rows: Sequence[dict]) -> list[dict]:
    """Per-method means over included prompts, plus exclusion counts."""
    methods: dict[str, list[dict]] = {}
    for row in rows:
        methods.setdefault(row["method"], []).append(row)
    out = []
    for method in sorted(methods):
        included = [r for r in methods[method] if not r["excluded"]]
        entry: dict = {
            "method": method,
            "prompts": len(methods[method]),
            "excluded": len(methods[method]) - len(included),
        }
        for col in _METRIC_COLS:
            vals = [r[col] for r in included if r.get(col) is not None]
            entry[col] = round(float(np.mean(vals)), 6) if vals else None
        out.append(entry)
    return out


def _format_report(summary: Sequence[dict], provider_name: str, embed_ok: bool) -> str:
    headers = ["method", "prompts", "excl", "IntraDistinct", "Div-BLEU", "EAD", "EmbDiv"]
    lines = [
        "diversity report",
        f"embedding provider: {provider_name}"
        + ("" if embed_ok else " (unavailable; EmbDiv not computed)"),
        "",
    ]
    table = [headers]
    for entry in summary:
        table.append(
            [
                entry["method"],
                str(entry["prompts"]),
                str(entry["excluded"]),
                _fmt(entry["intra_distinct"]),
                _fmt(entry["div_bleu"]),
                _fmt(entry["ead"]),
                _fmt(entry["embed_diversity"]),
            ]
        )
    widths = [max(len(row[i]) for row in table) for i in range(len(headers))]
    for row in table:
        lines.append(
            row[0].ljust(widths[0])
            + "  "
            + "  ".join(cell.rjust(w) for cell, w in zip(row[1:], widths[1:]))
        )
    lines.append("")
    return "\n".join(lines)


def _fmt(value: float | None) -> str:
    return "unavailable" if value is None else f"{value:.2f}"


def _render_metric_figure(summary: Sequence[dict], path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path.parent.mkdir(parents=True, exist_ok=True)
    methods = [e["method"] for e in summary]
    fig, ax = plt.subplots(figsize=(7, 4))
    x = np.arange(len(_METRIC_COLS))
    width = 0.8 / max(len(methods), 1)
    for i, entry in enumerate(summary):
        vals = [entry[c] if entry[c] is not None else 0.0 for c in _METRIC_COLS]
        ax.bar(x + i * width, vals, width, label=entry["method"])
    ax.set_xticks(x + width * (len(methods) - 1) / 2)
    ax.set_xticklabels(["IntraDistinct", "Div-BLEU", "EAD", "EmbDiv"])
    ax.set_ylabel("score")
    ax.set_title("diversity by method")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Software": "taps"})
    plt.close(fig)


# ---------------------------------------------------------------------------
# voting over a run


def vote_run(run_dir: str | Path) -> Path:
    """Majority-vote every (method, prompt) cell; write vote.jsonl/vote.txt."""
    run = Path(run_dir)
    manifest = read_manifest(run)
    golds = {p["id"]: p.get("gold") for p in manifest.get("prompts", [])}
    grouped = _group_records(read_records(run))

    rows = []
    for method in sorted(grouped):
        for prompt_id in sorted(grouped[method]):
            recs = grouped[method][prompt_id]
            answers = [extract_answer(r["text"]) for r in recs]
            gold = golds.get(prompt_id)
            winner, accuracy = majority_vote(answers, gold)
            target = canonical_number(gold) if gold is not None else None
            rows.append(
                {
                    "schema": SCHEMA_VERSION,
                    "method": method,
                    "prompt_id": prompt_id,
                    "answers": answers,
                    "winner": winner,
                    "correct": (winner == target) if target is not None else None,
                    "sample_accuracy": accuracy,
                }
            )

    with open(run / "vote.jsonl", "w") as fh:
        for row in rows:
            fh.write(_json_line(row))

    by_method: dict[str, list[dict]] = {}
    for row in rows:
        by_method.setdefault(row["method"], []).append(row)
    lines = ["majority-vote report", ""]
    lines.append(f"{'method':<16}{'prompts':>8}{'vote acc':>10}{'sample acc':>12}")
    for method in sorted(by_method):
        cells = by_method[method]
        scored = [r for r in cells if r["correct"] is not None]
        vote_acc = (
            f"{sum(r['correct'] for r in scored) / len(scored):.3f}" if scored else "n/a"
        )
        accs = [r["sample_accuracy"] for r in cells if r["sample_accuracy"] is not None]
        samp = f"{float(np.mean(accs)):.3f}" if accs else "n/a"
        lines.append(f"{method:<16}{len(cells):>8}{vote_acc:>10}{samp:>12}")
    lines.append("")
    (run / "vote.txt").write_text("\n".join(lines))
    return run / "vote.txt"


# ---------------------------------------------------------------------------
# sigma x window ablation


def ablation_run(
    model,
    prompts: Sequence[PromptSpec],
    gcfg: GenerationConfig,
    base_taps: TapsConfig,
    sigmas: Sequence[float],
    windows: Sequence[tuple[float, float]],
    root_seed: int,
    out_dir: str | Path,
    samples_per_prompt: int = 8,
) -> Path:
    """Sweep noise scale x window, evaluate each cell, render a heatmap."""
    from .schedule import AnnealSpec, NoiseWindow

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = np.zeros((len(sigmas), len(windows)))
    cell_rows = []
    for i, sigma in enumerate(sigmas):
        for j, (w_start, w_end) in enumerate(windows):
            taps = dataclasses.replace(
                base_taps,
                window=NoiseWindow(w_start, w_end),
                anneal=AnnealSpec(kind=base_taps.anneal.kind, sigma_max=sigma),
            )
            name = f"taps_s{sigma:g}_w{w_start:g}-{w_end:g}"
            cell_dir = out / "cells" / name
            run_experiment(
                model,
                prompts,
                [MethodSpec(name=name, taps=taps)],
                gcfg,
                root_seed,
                cell_dir,
                samples_per_prompt,
            )
            evaluate_run(cell_dir)
            metric_rows = [
                json.loads(line)
                for line in (cell_dir / "metrics.jsonl").read_text().splitlines()
            ]
            summary = summarize_metrics(metric_rows)[0]
            grid[i, j] = summary["embed_diversity"] if summary["embed_diversity"] is not None else np.nan
            cell_rows.append(
                {
                    "schema": SCHEMA_VERSION,
                    "sigma": sigma,
                    "window": [w_start, w_end],
                    "summary": summary,
                }
            )

    with open(out / "ablation.jsonl", "w") as fh:
        for row in cell_rows:
            fh.write(_json_line(row))

    lines = ["sigma x window ablation (mean embed diversity)", ""]
    header = "sigma".ljust(8) + "".join(f"[{a:g},{b:g}]".rjust(13) for a, b in windows)
    lines.append(header)
    for i, sigma in enumerate(sigmas):
        lines.append(
            f"{sigma:<8g}" + "".join(f"{grid[i, j]:13.2f}" for j in range(len(windows)))
        )
    lines.append("")
    (out / "ablation.txt").write_text("\n".join(lines))
    _render_ablation_figure(grid, sigmas, windows, out / "figures" / "ablation.png")
    return out / "ablation.txt"


def _render_ablation_figure(grid, sigmas, windows, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    im = ax.imshow(grid, cmap="viridis", aspect="auto")
    ax.set_xticks(range(len(windows)))
    ax.set_xticklabels([f"[{a:g},{b:g}]" for a, b in windows])
    ax.set_yticks(range(len(sigmas)))
    ax.set_yticklabels([f"{s:g}" for s in sigmas])
    ax.set_xlabel("noise window")
    ax.set_ylabel("sigma_max")
    ax.set_title("embed diversity across the noise grid")
    for i in range(len(sigmas)):
        for j in range(len(windows)):
            ax.text(j, i, f"{grid[i, j]:.1f}", ha="center", va="center", color="w", fontsize=8)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Software": "taps"})
    plt.close(fig)
