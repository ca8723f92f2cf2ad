import json

import numpy as np
import pytest

from rainbowpad.cli import main
from rainbowpad.denoiser import Denoiser, DenoiserConfig
from rainbowpad.harness import (ConfigError, ExperimentConfig, VariantSpec,
                                build_instances, grid_label, lay_out_corpus,
                                regenerate_reports, run_experiment)
from rainbowpad.padding import Scheme
from rainbowpad.tasks import TaskKind, task_vocab
from rainbowpad.trainer import TrainConfig


def tiny_config(output_dir, **over) -> ExperimentConfig:
    base = dict(
        variants=(VariantSpec(Scheme.EOS_PAD), VariantSpec(Scheme.RAINBOW, 3)),
        tasks=(TaskKind.REPEAT,),
        train_examples=24,
        eval_examples=3,
        response_len_min=1,
        response_len_max=6,
        train_length=24,
        eval_max_lengths=(24, 32),
        palette_size=3,
        model=DenoiserConfig(n_layers=1, n_heads=2, d_model=16, d_ff=32,
                             max_len=32, vocab_size=0),
        train=TrainConfig(epochs=1, batch_size=8),
        output_dir=str(output_dir),
    )
    base.update(over)
    return ExperimentConfig(**base)


# -- config plumbing -----------------------------------------------------------


def test_config_json_round_trip(tmp_path):
    cfg = tiny_config(tmp_path)
    again = ExperimentConfig.from_dict(json.loads(cfg.to_json()))
    assert again == cfg
    assert again.config_hash() == cfg.config_hash()


def test_config_hash_sensitive_to_fields(tmp_path):
    a = tiny_config(tmp_path)
    b = tiny_config(tmp_path, master_seed=1)
    assert a.config_hash() != b.config_hash()
    assert len(a.config_hash()) == 12


def test_response_len_step_round_trips_and_shapes_corpus(tmp_path):
    cfg = tiny_config(tmp_path, response_len_min=2, response_len_max=6,
                      response_len_step=2)
    again = ExperimentConfig.from_dict(json.loads(cfg.to_json()))
    assert again.response_len_step == 2
    v = task_vocab(cfg.palette_size)
    instances = build_instances(cfg, v, 0, 300)
    lengths = {len(i.gold) for i in instances}
    assert lengths == {2, 4, 6}


def test_eval_tasks_round_trip_and_select_eval_corpus(tmp_path):
    cfg = tiny_config(tmp_path, tasks=(TaskKind.REPEAT, TaskKind.COPY),
                      eval_tasks=(TaskKind.COPY,))
    again = ExperimentConfig.from_dict(json.loads(cfg.to_json()))
    assert again.eval_tasks == (TaskKind.COPY,)
    v = task_vocab(cfg.palette_size)
    train_kinds = {i.kind for i in build_instances(cfg, v, 0, 10)}
    eval_kinds = {i.kind for i in build_instances(cfg, v, 0, 10, for_eval=True)}
    assert train_kinds == {TaskKind.REPEAT, TaskKind.COPY}
    assert eval_kinds == {TaskKind.COPY}


def test_bad_eval_task_names_field():
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict({"eval_tasks": ["JUGGLE"]})
    assert exc.value.field_path == "eval_tasks"


def test_bad_scheme_names_field():
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict({"variants": [{"scheme": "NOPE"}]})
    assert exc.value.field_path == "variants[0].scheme"


def test_bad_task_names_field():
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict({"tasks": ["JUGGLE"]})
    assert exc.value.field_path == "tasks"


def test_bad_json_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_json_file(p)
    assert exc.value.field_path == "<file>"


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"model": {"bogus_knob": 1}})


def test_variant_labels():
    assert VariantSpec(Scheme.EOS_PAD).label == "EOS_PAD"
    assert VariantSpec(Scheme.RAINBOW, 3).label == "RAINBOW_K3"
    assert VariantSpec(Scheme.SINGLE_PAD).label == "SINGLE_PAD"


def test_grid_label_format():
    from rainbowpad.decoder import Strategy
    assert grid_label(Strategy.MARGIN, 4, 0.5, 256) == "MARGIN_B4_g0.5_L256"
    assert grid_label(Strategy.CONFIDENCE, 1, 1.0, 64) == "CONFIDENCE_B1_g1_L64"


# -- corpus assembly -----------------------------------------------------------


def test_build_instances_fit_training_canvas(tmp_path):
    cfg = tiny_config(tmp_path, tasks=tuple(TaskKind), response_len_max=32,
                      train_length=64)
    v = task_vocab(cfg.palette_size)
    instances = build_instances(cfg, v, seed=0, n_per_task=40)
    assert len(instances) == 120
    for variant in cfg.variants:
        corpus = lay_out_corpus(instances, 64, variant, v, seed=1)
        assert all(len(ex) == 64 for ex in corpus)


def test_lay_out_corpus_uses_variant_palette(tmp_path):
    cfg = tiny_config(tmp_path)
    v = task_vocab(cfg.palette_size)
    instances = build_instances(cfg, v, seed=0, n_per_task=10)
    corpus = lay_out_corpus(instances, 24, VariantSpec(Scheme.RAINBOW, 2), v, 0)
    used_pads = {t for ex in corpus for t in ex.tokens if t in v.pad_ids}
    assert used_pads <= set(v.pad_ids[:2])


# -- end-to-end run ------------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    cfg = tiny_config(out)
    run_dir = run_experiment(cfg)
    return cfg, run_dir


def test_run_writes_expected_files(tiny_run):
    cfg, run_dir = tiny_run
    assert run_dir.name == cfg.config_hash()
    for name in ("config.json", "results.json", "report.csv",
                 "eval_instances.jsonl", "padding_loss.svg"):
        assert (run_dir / name).exists(), name
    for label in ("EOS_PAD", "RAINBOW_K3"):
        assert (run_dir / f"{label}.ckpt").exists()
        assert (run_dir / f"{label}_trainlog.csv").exists()
        assert (run_dir / f"profiles_{label}.csv").exists()
        assert (run_dir / f"profiles_{label}.svg").exists()
    traces = sorted(p.name for p in (run_dir / "traces").iterdir())
    # 2 variants x 2 eval lengths x 1 strategy x 1 block count x 1 penalty
    assert len(traces) == 4


def test_results_rows_cover_grid(tiny_run):
    cfg, run_dir = tiny_run
    rows = json.loads((run_dir / "results.json").read_text())
    assert len(rows) == 4
    for row in rows:
        assert set(row) >= {"label", "grid", "max_length", "mean_res_length",
                            "accuracy", "eos_first50_ratio"}
        assert 0.0 <= row["accuracy"] <= 1.0
    # 3 eval instances per task, one task
    n_lines = (run_dir / "eval_instances.jsonl").read_text().count("\n")
    assert n_lines == 3


def test_checkpoint_reload_matches(tiny_run):
    cfg, run_dir = tiny_run
    model = Denoiser.load(run_dir / "EOS_PAD.ckpt")
    assert model.config.vocab_size == task_vocab(cfg.palette_size).size
    x = np.zeros(8, dtype=np.int64)
    assert np.isfinite(model.forward(x)).all()


def test_report_regeneration_is_byte_identical(tiny_run):
    cfg, run_dir = tiny_run
    targets = sorted(p for p in run_dir.iterdir()
                     if p.suffix in (".csv", ".svg"))
    before = {p.name: p.read_bytes() for p in targets}
    regenerate_reports(run_dir)
    after = {p.name: p.read_bytes() for p in targets}
    assert before == after


def test_run_is_deterministic(tmp_path):
    results = []
    for sub in ("a", "b"):
        cfg = tiny_config(tmp_path / sub)
        run_dir = run_experiment(cfg)
        results.append((run_dir / "results.json").read_text())
    assert results[0] == results[1]


# -- cli -----------------------------------------------------------------------


def test_cli_sweep_decode_probe_report(tmp_path, capsys):
    cfg = tiny_config(tmp_path / "runs")
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(cfg.to_json())

    assert main(["sweep", "--config", str(cfg_path)]) == 0
    run_dir = tmp_path / "runs" / cfg.config_hash()
    assert (run_dir / "results.json").exists()
    capsys.readouterr()

    v = task_vocab(cfg.palette_size)
    prompts = tmp_path / "prompts.jsonl"
    prompts.write_text(json.dumps([v.bos_id, v.id_of("repeat"),
                                   v.id_of("a"), v.id_of("3")]) + "\n")
    out = tmp_path / "traces.jsonl"
    assert main(["decode", "--checkpoint", str(run_dir / "EOS_PAD.ckpt"),
                 "--prompt-file", str(prompts), "--output", str(out),
                 "--max-length", "24", "--palette-size", "3",
                 "--strategy", "ENTROPY"]) == 0
    assert out.read_text().count("\n") == 1

    probe_out = tmp_path / "probe.json"
    assert main(["probe", "--checkpoint", str(run_dir / "RAINBOW_K3.ckpt"),
                 "--prompt-file", str(prompts), "--output", str(probe_out),
                 "--max-length", "24", "--palette-size", "3",
                 "--k-offset", "4"]) == 0
    probe = json.loads(probe_out.read_text())
    assert set(probe) == {"profile", "cascade"}
    assert len(probe["profile"]["p_eos"]) == 24

    assert main(["report", "--run-dir", str(run_dir)]) == 0


def test_cli_set_override_changes_hash(tmp_path, capsys):
    cfg = tiny_config(tmp_path / "runs")
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(cfg.to_json())
    assert main(["sweep", "--config", str(cfg_path),
                 "--set", "master_seed=5"]) == 0
    capsys.readouterr()
    expected = ExperimentConfig.from_dict(
        {**json.loads(cfg.to_json()), "master_seed": 5})
    assert (tmp_path / "runs" / expected.config_hash() / "results.json").exists()


def test_cli_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"variants": [{"scheme": "NOPE"}]}))
    assert main(["sweep", "--config", str(bad)]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_run_error_exit_code(tmp_path, capsys):
    assert main(["report", "--run-dir", str(tmp_path / "missing")]) == 3
    assert "run failure" in capsys.readouterr().err


def test_cli_train_only_writes_checkpoints(tmp_path, capsys):
    cfg = tiny_config(tmp_path / "runs", variants=(VariantSpec(Scheme.EOS_PAD),))
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(cfg.to_json())
    assert main(["train", "--config", str(cfg_path)]) == 0
    run_dir = tmp_path / "runs" / cfg.config_hash()
    assert (run_dir / "EOS_PAD.ckpt").exists()
    assert not (run_dir / "results.json").exists()
