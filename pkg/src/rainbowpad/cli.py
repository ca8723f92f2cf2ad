"""Command-line front end: train / decode / sweep / probe / report.

Exit codes: 0 success, 2 config error, 3 run failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .decoder import DecodePolicy, Strategy, decode
from .denoiser import Denoiser
from .harness import (ConfigError, ExperimentConfig, RunError,
                      probe_checkpoint, regenerate_reports, run_experiment)
from .tasks import task_vocab
from .vocab import Vocab


def _add_policy_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--strategy", choices=[s.value for s in Strategy],
                   default="CONFIDENCE")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--n-blocks", type=int, default=1)
    p.add_argument("--eos-penalty", type=float, default=1.0)
    p.add_argument("--gumbel-temperature", type=float, default=0.0)
    p.add_argument("--top-p", type=float, default=1.0)
    p.add_argument("--top-k", type=int, default=0)
    p.add_argument("--sampling-temperature", type=float, default=0.0)


def _policy_from_args(args) -> DecodePolicy:
    return DecodePolicy(
        strategy=Strategy(args.strategy),
        steps=args.steps,
        n_blocks=args.n_blocks,
        eos_penalty=args.eos_penalty,
        gumbel_temperature=args.gumbel_temperature,
        top_p=args.top_p,
        top_k=args.top_k,
        sampling_temperature=args.sampling_temperature,
    )


def _load_config(path: str, overrides: list[str]) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json_file(path)
    if overrides:
        obj = cfg.to_dict()
        for item in overrides:
            if "=" not in item:
                raise ConfigError("<cli>", f"override must be key=value, got {item!r}")
            key, val = item.split("=", 1)
            obj[key] = json.loads(val) if val and val[0] in "[{0123456789-\"tf" else val
        cfg = ExperimentConfig.from_dict(obj)
    return cfg


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config, args.set)
    run_dir = run_experiment(cfg, progress=lambda m: print(m, file=sys.stderr))
    print(run_dir)
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config, args.set)
    # train only: strip the decode grid down to nothing by reusing the sweep
    # with an empty grid is awkward, so just run training via run_experiment
    # pieces here
    from . import harness
    from .trainer import train
    import numpy as _np

    run_dir = Path(cfg.output_dir) / cfg.config_hash()
    run_dir.mkdir(parents=True, exist_ok=True)
    v = task_vocab(cfg.palette_size)
    model_cfg = dataclasses.replace(
        cfg.model, vocab_size=v.size, seed=cfg.master_seed,
        max_len=max(cfg.model.max_len, max(cfg.eval_max_lengths), cfg.train_length),
    )
    instances = harness.build_instances(
        cfg, v, cfg.master_seed + 1, cfg.train_examples // len(cfg.tasks))
    for variant in cfg.variants:
        corpus = harness.lay_out_corpus(instances, cfg.train_length, variant, v,
                                        cfg.master_seed + 3)
        model = Denoiser(model_cfg)
        print(f"training {variant.label} ({model.n_params()} params)", file=sys.stderr)
        model, log = train(model, corpus, cfg.train, v)
        model.save(run_dir / f"{variant.label}.ckpt")
        log.to_csv(run_dir / f"{variant.label}_trainlog.csv")
        print(run_dir / f"{variant.label}.ckpt")
    return 0


def cmd_decode(args) -> int:
    model = Denoiser.load(args.checkpoint)
    v = task_vocab(args.palette_size)
    policy = _policy_from_args(args)
    rng = np.random.default_rng(args.seed)
    out = Path(args.output)
    with open(args.prompt_file) as fh, open(out, "w") as outfh:
        for line in fh:
            prompt = json.loads(line)
            tr = decode(model, prompt, args.max_length, policy, v, rng)
            outfh.write(tr.to_json() + "\n")
    print(out)
    return 0


def cmd_probe(args) -> int:
    model = Denoiser.load(args.checkpoint)
    v = task_vocab(args.palette_size)
    prompt = json.loads(Path(args.prompt_file).read_text().splitlines()[0])
    result = probe_checkpoint(model, v, prompt, args.max_length, args.k_offset)
    Path(args.output).write_text(json.dumps(result, indent=2))
    print(args.output)
    return 0


def cmd_report(args) -> int:
    regenerate_reports(Path(args.run_dir))
    print(args.run_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rainbowpad",
        description="Masked-diffusion padding lab: train, decode, sweep, probe, report.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="run a full experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", default=[],
                   help="override a config key, e.g. --set master_seed=1")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="train the configured checkpoints only")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", default=[])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="decode a prompt file with one policy")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prompt-file", required=True,
                   help="one JSON list of token ids per line")
    p.add_argument("--output", required=True)
    p.add_argument("--max-length", type=int, required=True)
    p.add_argument("--palette-size", type=int, default=7)
    p.add_argument("--seed", type=int, default=0)
    _add_policy_flags(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("probe", help="cascade probe + step-0 confidence profile")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prompt-file", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--max-length", type=int, required=True)
    p.add_argument("--palette-size", type=int, default=7)
    p.add_argument("--k-offset", type=int, default=10)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("report", help="regenerate CSV/SVG reports from stored traces")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except RunError as e:
        print(f"run failure: {e}", file=sys.stderr)
        return 3
    except (OSError, ValueError, RuntimeError) as e:
        print(f"run failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
