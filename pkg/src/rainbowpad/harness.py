"""Experiment orchestration: trains one checkpoint per padding variant on an
identical corpus, sweeps the decode grid, and writes comparison reports."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .decoder import DecodePolicy, DecodeTrace, Strategy, decode_batch, cascade_probe
from .denoiser import Denoiser, DenoiserConfig
from .masking import log_softmax
from .padding import PaddedExample, Scheme, layout
from .tasks import TaskInstance, TaskKind, generate_corpus, task_vocab, uniform_lengths, check
from .trainer import TrainConfig, train
from .vocab import Vocab


class ConfigError(ValueError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.field_path = path


class RunError(RuntimeError):
    def __init__(self, coordinate: str, cause: Exception):
        super().__init__(f"sub-run failed at {coordinate}: {cause}")
        self.coordinate = coordinate


@dataclass(frozen=True)
class VariantSpec:
    """One trained checkpoint: a padding scheme plus (for rainbow) a cycle length."""
    scheme: Scheme
    k: int = 7

    @property
    def label(self) -> str:
        if self.scheme is Scheme.RAINBOW:
            return f"RAINBOW_K{self.k}"
        return self.scheme.value


@dataclass(frozen=True)
class ExperimentConfig:
    variants: tuple[VariantSpec, ...] = (
        VariantSpec(Scheme.EOS_PAD), VariantSpec(Scheme.RAINBOW, 7),
    )
    tasks: tuple[TaskKind, ...] = (TaskKind.REPEAT, TaskKind.COPY, TaskKind.ADD_CHAIN)
    train_examples: int = 12000
    eval_examples: int = 200           # held-out instances per task
    response_len_min: int = 1
    response_len_max: int = 32
    # lengths are sampled uniformly from range(min, max+1, step); a step > 1
    # gives a sparse comb of lengths, which keeps the prompt->length map easy
    # for tiny models while still spanning a wide band
    response_len_step: int = 1
    # held-out instances may use a different length band (0 = same as train)
    # and a different task subset (empty = same as train); '?'-form REPEAT
    # prompts are train-only either way
    eval_response_len_min: int = 0
    eval_response_len_max: int = 0
    eval_tasks: tuple[TaskKind, ...] = ()
    repeat_unknown_share: float = 0.0  # share of REPEAT prompts with '?' count
    train_length: int = 64             # layout L during training
    eval_max_lengths: tuple[int, ...] = (64, 256)
    strategies: tuple[Strategy, ...] = (Strategy.CONFIDENCE,)
    block_counts: tuple[int, ...] = (1,)
    eos_penalties: tuple[float, ...] = (1.0,)
    palette_size: int = 7              # shared vocab pad palette
    model: DenoiserConfig = field(default_factory=lambda: DenoiserConfig(
        n_layers=2, n_heads=4, d_model=64, d_ff=256, max_len=256, vocab_size=0,
    ))
    train: TrainConfig = field(default_factory=TrainConfig)
    master_seed: int = 0
    output_dir: str = "runs"

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:12]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["variants"] = [{"scheme": vs.scheme.value, "k": vs.k} for vs in self.variants]
        d["tasks"] = [t.value for t in self.tasks]
        d["eval_tasks"] = [t.value for t in self.eval_tasks]
        d["strategies"] = [s.value for s in self.strategies]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        def fail(path, msg):
            raise ConfigError(path, msg)

        kwargs: dict = {}
        try:
            if "variants" in obj:
                vs = []
                for i, rec in enumerate(obj["variants"]):
                    try:
                        scheme = Scheme(rec["scheme"])
                    except (KeyError, ValueError) as e:
                        fail(f"variants[{i}].scheme", str(e))
                    vs.append(VariantSpec(scheme, int(rec.get("k", 7))))
                kwargs["variants"] = tuple(vs)
            for key in ("tasks", "eval_tasks"):
                if key in obj:
                    try:
                        kwargs[key] = tuple(TaskKind(t) for t in obj[key])
                    except ValueError as e:
                        fail(key, str(e))
            if "strategies" in obj:
                try:
                    kwargs["strategies"] = tuple(Strategy(s) for s in obj["strategies"])
                except ValueError as e:
                    fail("strategies", str(e))
            for key in ("train_examples", "eval_examples", "response_len_min",
                        "response_len_max", "response_len_step",
                        "eval_response_len_min",
                        "eval_response_len_max", "train_length", "palette_size",
                        "master_seed"):
                if key in obj:
                    kwargs[key] = int(obj[key])
            if "repeat_unknown_share" in obj:
                kwargs["repeat_unknown_share"] = float(obj["repeat_unknown_share"])
            for key, cast in (("eval_max_lengths", int), ("block_counts", int),
                              ("eos_penalties", float)):
                if key in obj:
                    kwargs[key] = tuple(cast(x) for x in obj[key])
            if "output_dir" in obj:
                kwargs["output_dir"] = str(obj["output_dir"])
            if "model" in obj:
                try:
                    kwargs["model"] = DenoiserConfig(**obj["model"])
                except (TypeError, ValueError) as e:
                    fail("model", str(e))
            if "train" in obj:
                try:
                    kwargs["train"] = TrainConfig(**obj["train"])
                except (TypeError, ValueError) as e:
                    fail("train", str(e))
        except ConfigError:
            raise
        except Exception as e:
            raise ConfigError("<root>", str(e))
        return cls(**kwargs)

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError("<file>", f"not valid JSON: {e}")
        return cls.from_dict(obj)


# -- corpus assembly ----------------------------------------------------------


def build_instances(cfg: ExperimentConfig, v: Vocab, seed: int, n_per_task: int,
                    for_eval: bool = False) -> list[TaskInstance]:
    rng = np.random.default_rng(seed)
    lo = cfg.response_len_min
    hi = cfg.response_len_max
    if for_eval and cfg.eval_response_len_min:
        lo = cfg.eval_response_len_min
    if for_eval and cfg.eval_response_len_max:
        hi = cfg.eval_response_len_max
    # COPY prompts echo the response, so their budget is roughly halved to keep
    # prompt + response + terminator inside the training canvas
    caps = {
        TaskKind.REPEAT: hi,
        TaskKind.COPY: min(hi, (cfg.train_length - 4) // 2),
        TaskKind.ADD_CHAIN: min(hi, (cfg.train_length - 6) // 2),
    }
    share = 0.0 if for_eval else cfg.repeat_unknown_share
    kinds = cfg.eval_tasks if for_eval and cfg.eval_tasks else cfg.tasks
    out: list[TaskInstance] = []
    for kind in kinds:
        dist = uniform_lengths(min(lo, max(caps[kind], 1)), max(caps[kind], 1),
                               cfg.response_len_step)
        out.extend(generate_corpus(kind, n_per_task, dist, rng, v,
                                   repeat_unknown_share=share))
    return out


def lay_out_corpus(instances: list[TaskInstance], L: int, variant: VariantSpec,
                   v: Vocab, seed: int) -> list[PaddedExample]:
    rng = np.random.default_rng(seed)
    k = variant.k if variant.scheme is Scheme.RAINBOW else None
    return [
        layout(list(inst.prompt), list(inst.gold), L, variant.scheme, v, rng, k=k)
        for inst in instances
    ]


# -- evaluation ---------------------------------------------------------------


def evaluate_grid_point(
    model: Denoiser,
    eval_instances: list[TaskInstance],
    max_length: int,
    policy: DecodePolicy,
    v: Vocab,
    seed: int,
) -> tuple[dict, list[DecodeTrace]]:
    rng = np.random.default_rng(seed)
    prompts = [list(inst.prompt) for inst in eval_instances]
    traces = decode_batch(model, prompts, max_length, policy, v, rng)
    n = len(traces)
    correct = 0
    for inst, tr in zip(eval_instances, traces):
        response = tr.final_tokens[tr.prompt_len:tr.prompt_len + tr.res_length]
        correct += check(inst, response, v)
    row = {
        "max_length": max_length,
        "mean_res_length": float(np.mean([tr.res_length for tr in traces])),
        "accuracy": correct / n,
        "eos_first50_ratio": float(np.mean(
            [metrics.eos_first50_ratio(tr, v) for tr in traces]
        )),
    }
    return row, traces


def grid_label(strategy: Strategy, n_blocks: int, eos_penalty: float,
               max_length: int) -> str:
    return f"{strategy.value}_B{n_blocks}_g{eos_penalty:g}_L{max_length}"


# -- full experiment ----------------------------------------------------------


def run_experiment(cfg: ExperimentConfig, progress=None) -> Path:
    """Train every variant, sweep the decode grid, write reports. Returns the
    run directory (named by the config hash)."""
    run_dir = Path(cfg.output_dir) / cfg.config_hash()
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(cfg.to_json())
    chash = cfg.config_hash()
    note = lambda msg: progress(msg) if progress else None

    v = task_vocab(cfg.palette_size)
    model_cfg = dataclasses.replace(
        cfg.model, vocab_size=v.size, seed=cfg.master_seed,
        max_len=max(cfg.model.max_len, max(cfg.eval_max_lengths), cfg.train_length),
    )

    n_train_per_task = cfg.train_examples // len(cfg.tasks)
    train_instances = build_instances(cfg, v, cfg.master_seed + 1, n_train_per_task)
    eval_instances = build_instances(cfg, v, cfg.master_seed + 2,
                                     cfg.eval_examples, for_eval=True)

    (run_dir / "eval_instances.jsonl").write_text("\n".join(
        json.dumps({"kind": inst.kind.value, "prompt": list(inst.prompt),
                    "gold": list(inst.gold)})
        for inst in eval_instances
    ) + "\n")

    checkpoints: dict[str, Denoiser] = {}
    for variant in cfg.variants:
        label = variant.label
        note(f"training {label}")
        try:
            corpus = lay_out_corpus(train_instances, cfg.train_length, variant, v,
                                    cfg.master_seed + 3)
            model = Denoiser(model_cfg)
            model, log = train(model, corpus, cfg.train, v)
        except Exception as e:
            raise RunError(f"train/{label}", e)
        model.save(run_dir / f"{label}.ckpt")
        log.to_csv(run_dir / f"{label}_trainlog.csv")
        checkpoints[label] = model

    trace_dir = run_dir / "traces"
    trace_dir.mkdir(exist_ok=True)
    results = []
    for label, model in checkpoints.items():
        for max_length in cfg.eval_max_lengths:
            for strategy in cfg.strategies:
                for n_blocks in cfg.block_counts:
                    for gamma in cfg.eos_penalties:
                        gl = grid_label(strategy, n_blocks, gamma, max_length)
                        note(f"decoding {label} @ {gl}")
                        policy = DecodePolicy(
                            strategy=strategy, n_blocks=n_blocks, eos_penalty=gamma,
                        )
                        try:
                            row, traces = evaluate_grid_point(
                                model, eval_instances, max_length, policy, v,
                                cfg.master_seed + 4,
                            )
                        except Exception as e:
                            raise RunError(f"decode/{label}/{gl}", e)
                        row["label"] = label
                        row["grid"] = gl
                        results.append(row)
                        with open(trace_dir / f"{label}__{gl}.jsonl", "w") as fh:
                            for tr in traces:
                                fh.write(tr.to_json() + "\n")

    with open(run_dir / "results.json", "w") as fh:
        json.dump(results, fh, indent=2)

    _write_reports(run_dir, cfg, v, checkpoints, results)
    return run_dir


def _write_reports(run_dir: Path, cfg: ExperimentConfig, v: Vocab,
                   checkpoints: dict[str, Denoiser], results: list[dict]) -> None:
    chash = cfg.config_hash()
    report = metrics.OverflowReport()
    for row in results:
        report.add_row(row["max_length"], row["mean_res_length"], row["accuracy"],
                       row["eos_first50_ratio"], label=f"{row['label']}/{row['grid']}")
    metrics.write_report_csv(report, run_dir / "report.csv",
                             header_comment=f"config_hash={chash}")

    # step-0 confidence profiles and decode-order maps, per checkpoint at the
    # largest eval length, averaged over a handful of held-out prompts
    eval_instances = _load_eval_instances(run_dir)
    probe_prompts = [list(inst.prompt) for inst in eval_instances[:16]]
    L = max(cfg.eval_max_lengths)
    for label, model in checkpoints.items():
        profs = [metrics.initial_confidence_profile(model, p, L, v)
                 for p in probe_prompts]
        metrics.write_profile_csv(metrics.mean_profile(profs),
                                  run_dir / f"profiles_{label}.csv",
                                  header_comment=f"config_hash={chash}")
        metrics.line_chart_svg(
            {"p_eos": metrics.mean_profile(profs)["p_eos"],
             "p_pad_max": metrics.mean_profile(profs)["p_pad_max"]},
            run_dir / f"profiles_{label}.svg",
            title=f"step-0 confidence profile ({label})", y_max=1.0,
        )

    for row in results:
        path = run_dir / "traces" / f"{row['label']}__{row['grid']}.jsonl"
        traces = _load_traces(path)
        same_pl = [tr for tr in traces if tr.prompt_len == traces[0].prompt_len]
        order = metrics.decode_order_map(same_pl)
        metrics.write_order_map_csv(order,
                                    run_dir / f"order_map_{row['label']}__{row['grid']}.csv",
                                    header_comment=f"config_hash={chash}")
        metrics.heat_strip_svg(order, run_dir / f"order_map_{row['label']}__{row['grid']}.svg",
                               title=f"mean reveal step: {row['label']} {row['grid']}")

    series = {}
    for label in checkpoints:
        log_rows = (run_dir / f"{label}_trainlog.csv").read_text().splitlines()[1:]
        series[label] = np.array([float(r.split(",")[3]) for r in log_rows])
    metrics.line_chart_svg(series, run_dir / "padding_loss.svg",
                           title="padding-region loss contribution per logged step")


def _load_eval_instances(run_dir: Path) -> list[TaskInstance]:
    out = []
    for line in (run_dir / "eval_instances.jsonl").read_text().splitlines():
        rec = json.loads(line)
        out.append(TaskInstance(TaskKind(rec["kind"]), tuple(rec["prompt"]),
                                tuple(rec["gold"])))
    return out


def _load_traces(path: Path) -> list[DecodeTrace]:
    return [DecodeTrace.from_json(line) for line in path.read_text().splitlines()]


def regenerate_reports(run_dir: Path) -> None:
    """Rebuild every CSV/SVG from the stored traces and checkpoints; pure
    regeneration, byte-identical on unchanged inputs."""
    cfg = ExperimentConfig.from_json_file(run_dir / "config.json")
    v = task_vocab(cfg.palette_size)
    with open(run_dir / "results.json") as fh:
        results = json.load(fh)
    checkpoints = {
        variant.label: Denoiser.load(run_dir / f"{variant.label}.ckpt")
        for variant in cfg.variants
    }
    _write_reports(run_dir, cfg, v, checkpoints, results)


def probe_checkpoint(model: Denoiser, v: Vocab, prompt: list[int], L: int,
                     k_offset: int = 10) -> dict:
    """Cascade-probe grid over tail positions plus the step-0 profile."""
    prof = metrics.initial_confidence_profile(model, prompt, L, v)
    tail = range(max(len(prompt), L - 32), L - k_offset)
    cascade = {
        int(i): cascade_probe(model, prompt, L, i, k_offset, v) for i in tail
    }
    return {"profile": {k: val.tolist() for k, val in prof.items()},
            "cascade": cascade}
