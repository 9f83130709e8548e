"""Command-line front end: generate / evaluate / ablate / vote.

Runs the toy denoiser end to end so the whole pipeline can be exercised
from a shell. Library users wire their own denoiser through
decoder.generate directly.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .decoder import GenerationConfig, SamplerSpec
from .harness import (
    FilterPolicy,
    MethodSpec,
    PromptSpec,
    ablation_run,
    evaluate_run,
    run_experiment,
    vote_run,
)
from .metrics import HashedNgramEmbedder, RemoteEmbedder
from .perturb import TapsConfig
from .schedule import AnnealSpec, NoiseWindow
from .toy_denoiser import ToyModel


def _parse_window(text: str) -> tuple[float, float]:
    try:
        a, b = text.split(":")
        return float(a), float(b)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"window must look like 0.9:0.3, got {text!r}") from exc


def _parse_method(token: str, taps: TapsConfig) -> MethodSpec:
    if token == "baseline":
        return MethodSpec(name="baseline")
    if token == "taps":
        return MethodSpec(name="taps", taps=taps)
    for kind in ("top_k", "top_p", "min_p"):
        if token.startswith(kind + "="):
            value = token.split("=", 1)[1]
            if kind == "top_k":
                spec = SamplerSpec(kind="top_k", k=int(value))
            elif kind == "top_p":
                spec = SamplerSpec(kind="top_p", p=float(value))
            else:
                spec = SamplerSpec(kind="min_p", p_base=float(value))
            return MethodSpec(name=token.replace("=", ""), sampler=spec)
    raise argparse.ArgumentTypeError(
        f"unknown method {token!r}; use baseline, taps, top_k=K, top_p=P or min_p=P"
    )


def _add_generation_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", required=True, help="run directory to create")
    p.add_argument("--seed", type=int, default=1234, help="root seed for the run")
    p.add_argument("--model-seed", type=int, default=0, help="toy model seed")
    p.add_argument("--num-prompts", type=int, default=20)
    p.add_argument("--prompt-length", type=int, default=6)
    p.add_argument("--prompts", type=Path, default=None, help="JSONL prompt file (id/tokens/gold)")
    p.add_argument("--samples", type=int, default=10, help="samples per prompt")
    p.add_argument("--length", type=int, default=16, help="generated tokens per sample")
    p.add_argument("--block-length", type=int, default=16)
    p.add_argument("--steps", type=int, default=16, help="total denoising steps")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--remask", default="low_confidence", choices=["low_confidence", "low_confidence_dynamic"])
    p.add_argument("--threshold", type=float, default=0.9, help="dynamic remasking confidence bar")
    p.add_argument("--sigma", type=float, default=0.2, help="peak perturbation scale")
    p.add_argument("--psi", type=float, default=0.9, help="perturbation mixing weight")
    p.add_argument("--window", type=_parse_window, default=(0.9, 0.3), help="noise window start:end")
    p.add_argument("--anneal", default="cosine", choices=["cosine", "linear"])
    p.add_argument("--perturb-mode", default="embedding", choices=["embedding", "token_mask"])
    p.add_argument("--mask-rate", type=float, default=0.05)


def _load_prompts(args, model: ToyModel) -> list[PromptSpec]:
    if args.prompts is not None:
        specs = []
        for line in args.prompts.read_text().splitlines():
            if not line.strip():
                continue
            row = json.loads(line)
            specs.append(
                PromptSpec(
                    prompt_id=str(row["id"]),
                    tokens=tuple(int(t) for t in row["tokens"]),
                    gold=row.get("gold"),
                )
            )
        return specs
    return [
        PromptSpec(prompt_id=f"p{i:03d}", tokens=tuple(int(t) for t in toks))
        for i, toks in enumerate(model.branch_prompts(args.num_prompts, args.prompt_length))
    ]


def _taps_config(args) -> TapsConfig:
    return TapsConfig(
        window=NoiseWindow(*args.window),
        anneal=AnnealSpec(kind=args.anneal, sigma_max=args.sigma),
        psi=args.psi,
        mode=args.perturb_mode,
        mask_rate=args.mask_rate,
    )


def _generation_config(args, model: ToyModel) -> GenerationConfig:
    return GenerationConfig(
        gen_length=args.length,
        block_length=args.block_length,
        total_steps=args.steps,
        mask_id=model.mask_id,
        temperature=args.temperature,
        remask=args.remask,
        conf_threshold=args.threshold,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taps", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="decode a method matrix into a run directory")
    _add_generation_args(g)
    g.add_argument(
        "--methods",
        default="baseline,taps",
        help="comma list: baseline, taps, top_k=K, top_p=P, min_p=P",
    )

    e = sub.add_parser("evaluate", help="score an existing run directory")
    e.add_argument("--run", required=True, type=Path)
    e.add_argument("--min-chars", type=int, default=50)
    e.add_argument("--top-n", type=int, default=12)
    e.add_argument("--embedding", default="hashed", choices=["hashed", "remote"])

    a = sub.add_parser("ablate", help="sweep sigma x window and render the grid")
    _add_generation_args(a)
    a.add_argument("--sigmas", default="0.1,0.2,0.3")
    a.add_argument("--windows", default="0.9:0.3,0.9:0.5,0.5:0.1")

    v = sub.add_parser("vote", help="majority-vote answers in a run directory")
    v.add_argument("--run", required=True, type=Path)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "generate":
        model = ToyModel(seed=args.model_seed)
        taps = _taps_config(args)
        methods = [_parse_method(tok.strip(), taps) for tok in args.methods.split(",") if tok.strip()]
        run = run_experiment(
            model,
            _load_prompts(args, model),
            methods,
            _generation_config(args, model),
            args.seed,
            args.out,
            samples_per_prompt=args.samples,
        )
        print(f"wrote {run / 'records.jsonl'}")
        return 0

    if args.command == "evaluate":
        provider = RemoteEmbedder() if args.embedding == "remote" else HashedNgramEmbedder()
        name = "remote" if args.embedding == "remote" else "hashed-3gram"
        report = evaluate_run(
            args.run,
            FilterPolicy(min_chars=args.min_chars, top_n=args.top_n),
            provider,
            provider_name=name,
        )
        print(report.read_text())
        return 0

    if args.command == "ablate":
        model = ToyModel(seed=args.model_seed)
        sigmas = [float(s) for s in args.sigmas.split(",") if s.strip()]
        windows = [_parse_window(w) for w in args.windows.split(",") if w.strip()]
        table = ablation_run(
            model,
            _load_prompts(args, model),
            _generation_config(args, model),
            _taps_config(args),
            sigmas,
            windows,
            args.seed,
            args.out,
            samples_per_prompt=args.samples,
        )
        print(table.read_text())
        return 0

    if args.command == "vote":
        report = vote_run(args.run)
        print(report.read_text())
        return 0

    return 1


if __name__ == "__main__":
    sys.exit(main())
