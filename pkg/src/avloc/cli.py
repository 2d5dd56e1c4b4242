"""Pipeline orchestration: generate -> pretrain -> oracle -> train ->
evaluate -> analyze, with content-hash idempotence and a run manifest.

Every stage is reproducible from (config, code version); reruns with an
unchanged config skip completed stages.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click

from . import __version__, analysis, dsp, model, oracle, render, trials
from .config import RunConfig, load_config, with_out
from .trials import DistanceCategory

STAGES = ("generate", "pretrain", "oracle", "train", "evaluate", "analyze")


class Run:
    """Artifact layout and manifest bookkeeping for one output directory."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.root = Path(config.out)
        self.manifest_path = self.root / "manifest.json"
        self.manifest = {"config_hash": config.digest(), "version": __version__,
                         "stages": {}}
        if self.manifest_path.exists():
            stored = json.loads(self.manifest_path.read_text())
            if stored.get("config_hash") == config.digest() \
                    and stored.get("version") == __version__:
                self.manifest = stored

    def stage_hash(self, name: str) -> str:
        return f"{self.config.digest()}:{__version__}:{name}"

    def is_done(self, name: str) -> bool:
        entry = self.manifest["stages"].get(name)
        if not entry or entry.get("hash") != self.stage_hash(name):
            return False
        return all((self.root / rel).exists() for rel in entry.get("artifacts", []))

    def mark_done(self, name: str, artifacts: list[str], seconds: float):
        self.manifest["stages"][name] = {
            "hash": self.stage_hash(name),
            "artifacts": artifacts,
            "seconds": round(seconds, 3),
        }
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest_path.write_text(
            json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")

    def write(self, rel: str, data) -> str:
        """Write text/bytes, skipping the write when content is unchanged."""
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        mode = "b" if isinstance(data, bytes) else "t"
        if path.exists():
            existing = path.read_bytes() if mode == "b" else path.read_text()
            if existing == data:
                return rel
        if mode == "b":
            path.write_bytes(data)
        else:
            path.write_text(data)
        return rel


def _echo(msg: str):
    click.echo(msg)


def stage(run: Run, name: str, force: bool = False):
    """Decorator-ish guard: returns True when the stage must execute."""
    if not force and run.is_done(name):
        _echo(f"[{name}] up to date, skipped")
        return False
    return True


# --- stage implementations -----------------------------------------------------

def run_generate(run: Run, force: bool = False) -> None:
    if not stage(run, "generate", force):
        return
    t0 = time.time()
    cfg = run.config
    base = trials.enumerate_trials(cfg.seed, replication=cfg.replication)
    artifacts = [run.write("trials.jsonl", trials.dump_manifest(base))]
    for t in base:
        bundle = render.render_bundle(t, sample_rate=cfg.sample_rate)
        mi = dsp.preprocess(bundle)
        artifacts.append(run.write(f"inputs/trial_{t.trial_id:04d}.xmi",
                                   dsp.model_input_to_bytes(mi)))
        artifacts.append(run.write(f"audio/trial_{t.trial_id:04d}.wav",
                                   render.wav_bytes(bundle.audio)))
    run.mark_done("generate", artifacts, time.time() - t0)
    _echo(f"[generate] {len(base)} trials rendered and preprocessed")


def load_inputs(run: Run) -> dict:
    base = trials.load_manifest((run.root / "trials.jsonl").read_text())
    inputs = {}
    for t in base:
        blob = (run.root / f"inputs/trial_{t.trial_id:04d}.xmi").read_bytes()
        inputs[t.trial_id] = dsp.model_input_from_bytes(blob)
    return inputs


def run_pretrain(run: Run, force: bool = False) -> None:
    if not stage(run, "pretrain", force):
        return
    t0 = time.time()
    cfg = run.config
    makers = {
        "audio": model.make_audio_pretrain_set,
        "face": model.make_face_pretrain_set,
        "body": model.make_body_pretrain_set,
    }
    artifacts = []
    metrics = {}
    for i, (name, maker) in enumerate(makers.items()):
        data = maker(cfg.pretrain_trials, seed=cfg.seed + i)
        net = model.build_channel(name, seed=cfg.seed + 100 + i,
                                  feature_dim=cfg.feature_dim)
        acc = model.pretrain_channel(net, data, epochs=cfg.epochs_pretrain,
                                     seed=cfg.seed + 200 + i,
                                     log=lambda m: _echo(f"[pretrain] {m}"))
        metrics[name] = acc
        artifacts.append(run.write(f"channels/{name}.xmck", model.save_channel(net)))
    artifacts.append(run.write("channels/metrics.json",
                               json.dumps(metrics, indent=2, sort_keys=True) + "\n"))
    run.mark_done("pretrain", artifacts, time.time() - t0)
    _echo(f"[pretrain] held-out accuracy: " +
          ", ".join(f"{k}={v:.3f}" for k, v in metrics.items()))


def load_channels(run: Run) -> dict:
    cfg = run.config
    channels = {}
    for i, name in enumerate(("audio", "face", "body")):
        net = model.build_channel(name, seed=cfg.seed + 100 + i,
                                  feature_dim=cfg.feature_dim)
        model.load_channel(net, (run.root / f"channels/{name}.xmck").read_bytes())
        channels[name] = net
    return channels


def run_oracle(run: Run, force: bool = False) -> None:
    if not stage(run, "oracle", force):
        return
    t0 = time.time()
    cfg = run.config
    cat_targets = {DistanceCategory(k): v for k, v in cfg.category_targets.items()}
    params = oracle.calibrate(category_targets=cat_targets,
                              strategy_targets=cfg.strategy_targets,
                              seed=cfg.seed)
    base = trials.load_manifest((run.root / "trials.jsonl").read_text())
    dataset = oracle.generate_dataset(params, n_subjects=cfg.subjects,
                                      seed=cfg.seed, trials=base)
    artifacts = [
        run.write("oracle/params.json",
                  json.dumps(params.to_dict(), indent=2, sort_keys=True) + "\n"),
        run.write("oracle/dataset.jsonl", model.dump_dataset(dataset)),
    ]
    run.mark_done("oracle", artifacts, time.time() - t0)
    _echo(f"[oracle] calibrated (params {params.digest()}); "
          f"{len(dataset.records)} records generated")


def load_oracle_dataset(run: Run) -> model.BehavioralDataset:
    return model.load_dataset((run.root / "oracle/dataset.jsonl").read_text())


def run_train(run: Run, force: bool = False) -> None:
    if not stage(run, "train", force):
        return
    t0 = time.time()
    cfg = run.config
    dataset = load_oracle_dataset(run)
    channels = load_channels(run)
    inputs = load_inputs(run)
    features = model.feature_table(channels, inputs)
    results = model.loocv(dataset, channels, inputs,
                          epochs=cfg.epochs_fusion, seed=cfg.seed,
                          fold_cap=cfg.folds, features=features,
                          log=lambda m: _echo(f"[train] {m}"))
    artifacts = [run.write("model/folds.jsonl",
                           model.fold_results_to_jsonl(results))]
    run.mark_done("train", artifacts, time.time() - t0)
    _echo(f"[train] {len(results)} folds complete")


def load_fold_records(run: Run) -> list:
    base = trials.load_manifest((run.root / "trials.jsonl").read_text())
    by_id = {t.trial_id: t for t in base}
    records = []
    for line in (run.root / "model/folds.jsonl").read_text().splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        t = by_id[d["trial_id"]]
        records.append(model.BehavioralRecord(
            subject_id=d["subject_id"],
            trial=trials.TrialSpec(
                trial_id=t.trial_id, condition=t.condition,
                audio_pos=t.audio_pos, lips_pos=t.lips_pos, arm_pos=t.arm_pos,
                syllables=t.syllables, session=d["session"]),
            response=d["response"], source="model"))
    return records


def run_evaluate(run: Run, force: bool = False) -> None:
    if not stage(run, "evaluate", force):
        return
    t0 = time.time()
    dataset = load_oracle_dataset(run)
    model_records = load_fold_records(run)
    fold_subjects = {r.subject_id for r in model_records}
    human_records = [r for r in dataset.records if r.subject_id in fold_subjects]
    comparison = analysis.compare_human_model(human_records, model_records)
    model_bias = analysis.ventriloquism_bias(model_records)
    oracle_bias = analysis.ventriloquism_bias(human_records)
    report = {
        "human_vs_model": {
            "F": comparison.F, "p": comparison.p,
            "eta_squared": comparison.eta_squared,
            "df": [comparison.df_effect, comparison.df_error],
        },
        "model_error_rate": analysis.pooled_error_rate(model_records),
        "oracle_error_rate": analysis.pooled_error_rate(human_records),
        "model_bias": model_bias,
        "oracle_bias": oracle_bias,
        "bias_ordering_ok": (
            model_bias["lips_arm"] >= model_bias["lips"]
            > model_bias["lips_vs_arm_lips"] > model_bias["arm"]),
    }
    artifacts = [run.write("reports/evaluation.json",
                           json.dumps(report, indent=2, sort_keys=True) + "\n")]
    run.mark_done("evaluate", artifacts, time.time() - t0)
    _echo(f"[evaluate] human-vs-model F={comparison.F:.3f} p={comparison.p:.3f}")


def run_analyze(run: Run, force: bool = False) -> None:
    if not stage(run, "analyze", force):
        return
    t0 = time.time()
    dataset = load_oracle_dataset(run)
    records = dataset.records
    model_records = None
    if (run.root / "model/folds.jsonl").exists():
        model_records = load_fold_records(run)
    artifacts = [
        run.write("reports/er_by_category.csv",
                  analysis.er_table_csv(records, "category")),
        run.write("reports/er_by_condition.csv",
                  analysis.er_table_csv(records, "condition")),
        run.write("reports/er_by_strategy.csv",
                  analysis.er_table_csv(records, "strategy")),
        run.write("reports/er_by_session.csv",
                  analysis.er_table_csv(records, "session")),
        run.write("reports/bias.csv", analysis.bias_table_csv(records)),
        run.write("reports/summary.txt",
                  analysis.summary_text(records, model_records)),
        run.write("reports/er_by_category.svg",
                  analysis.er_bars_svg(analysis.error_rates(records, "category"),
                                       title="error rate by avatar distance")),
    ]
    run.mark_done("analyze", artifacts, time.time() - t0)
    _echo("[analyze] reports written")


STAGE_RUNNERS = {
    "generate": run_generate,
    "pretrain": run_pretrain,
    "oracle": run_oracle,
    "train": run_train,
    "evaluate": run_evaluate,
    "analyze": run_analyze,
}


# --- CLI ----------------------------------------------------------------------

def _common_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(), default=None,
                      help="INI config file")(fn)
    fn = click.option("--seed", type=int, default=None, help="master seed")(fn)
    fn = click.option("--out", type=click.Path(), default=None,
                      help="output directory")(fn)
    fn = click.option("--folds", type=int, default=None, help="LOOCV fold cap")(fn)
    fn = click.option("--force", is_flag=True, help="rerun even if up to date")(fn)
    return fn


def _build_run(config_path, seed, out, folds, **extra) -> Run:
    overrides = {"seed": seed, "folds": folds, **extra}
    cfg = load_config(config_path, **{k: v for k, v in overrides.items()
                                      if v is not None})
    cfg = with_out(cfg, out)
    return Run(cfg)


@click.group()
def main():
    """Audio-visual localization experiment pipeline."""


def _register(name: str, upstream: tuple = ()):
    @main.command(name=name, help=f"run the {name} stage")
    @_common_options
    def _cmd(config_path, seed, out, folds, force, _name=name, _up=upstream):
        try:
            run = _build_run(config_path, seed, out, folds)
            for dep in _up:
                STAGE_RUNNERS[dep](run, force=False)
            STAGE_RUNNERS[_name](run, force=force)
        except Exception as exc:  # noqa: BLE001 - single CLI error funnel
            _echo(f"error in stage {_name}: {exc}")
            sys.exit(1)


_register("generate")
_register("pretrain")
_register("oracle", upstream=("generate",))
_register("train", upstream=("generate", "pretrain", "oracle"))
_register("evaluate", upstream=("generate", "pretrain", "oracle", "train"))
_register("analyze", upstream=("generate", "pretrain", "oracle"))


@main.command(name="pipeline", help="run every stage in order")
@_common_options
@click.option("--epochs-pretrain", type=int, default=None)
@click.option("--epochs-fusion", type=int, default=None)
@click.option("--pretrain-trials", type=int, default=None)
def pipeline(config_path, seed, out, folds, force, epochs_pretrain,
             epochs_fusion, pretrain_trials):
    try:
        run = _build_run(config_path, seed, out, folds,
                         epochs_pretrain=epochs_pretrain,
                         epochs_fusion=epochs_fusion,
                         pretrain_trials=pretrain_trials)
        for name in STAGES:
            STAGE_RUNNERS[name](run, force=force)
    except Exception as exc:  # noqa: BLE001
        _echo(f"error in pipeline: {exc}")
        sys.exit(1)


@main.command(name="serve", help="serve the human trial runner API")
@click.option("--port", type=int, default=8000)
@click.option("--host", default="127.0.0.1")
@click.option("--out", type=click.Path(), default="runs/service",
              help="directory for session journals")
@click.option("--cors-origin", default="*")
def serve(port, host, out, cors_origin):
    import uvicorn

    from .service import create_app

    app = create_app(data_dir=out, cors_origin=cors_origin)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
