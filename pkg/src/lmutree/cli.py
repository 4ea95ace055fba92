"""Command-line entry point: ``lmutree <subcommand> [--config FILE] [--section.key VALUE ...]``.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import evaluation, interpret
from .baselines import CartForest, cut_learn, load_model
from .config import KEYS, STAGES, RunConfig, load_config
from .core import ConfigError, LmutError, read_manifest, read_ndjson, write_ndjson
from .datagen import ActiveStream, fold_split, record_experience
from .envs import env_spec, make_env
from .lmut import LmutForest
from .teacher import load_teacher, train_teacher

log = logging.getLogger("lmutree")

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


class StageFailure(Exception):
    def __init__(self, stage, message):
        super().__init__(f"stage {stage} failed: {message}")
        self.stage = stage


# --- artifact helpers ---------------------------------------------------------------


def _manifest_line(manifest) -> str:
    return json.dumps({"manifest": manifest}, sort_keys=True)


def write_json(path, payload: dict, manifest: dict):
    doc = {"manifest": manifest, **payload}
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")
    return path


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def artifact_manifest(path):
    """The manifest embedded in any artifact written by this tool, or None."""
    try:
        if path.endswith(".json"):
            return read_json(path).get("manifest")
        if path.endswith(".ndjson"):
            return read_manifest(path)
        with open(path) as fh:
            first = fh.readline()
        if first.startswith("# "):
            return json.loads(first[2:]).get("manifest")
    except (OSError, ValueError, AttributeError):
        return None
    return None


def stage_outputs(cfg: RunConfig, stage: str):
    outs = {
        "train-teacher": ["teacher.json"],
        "collect": ["data.ndjson"],
        "mimic-train": ["model.json"],
        "fidelity-eval": ["fidelity.json"],
        "play-eval": ["play.json"],
        "interpret": ["influence.csv", "rules.txt"],
    }[stage]
    return [cfg.path(name) for name in outs]


def is_fresh(cfg: RunConfig, stage: str) -> bool:
    """True when every output of ``stage`` exists and was made with the same upstream settings."""
    if cfg["run.force"]:
        return False
    want = cfg.stage_hash(stage)
    for path in stage_outputs(cfg, stage):
        m = artifact_manifest(path) if os.path.exists(path) else None
        if m is None or m.get("stage_hash") != want:
            return False
    return True


def _require(path, what):
    if not os.path.exists(path):
        raise ConfigError(f"{what} not found: {path}")


def _load_model(cfg):
    return load_model(read_json(cfg.path("model.json"))["model"])


def _split_records(cfg, records):
    """(train, test) records for the configured mode."""
    if cfg["run.mode"] == "experience":
        return fold_split(records, cfg["eval.fold"], cfg["eval.folds"])
    n = cfg["run.transitions"]
    if len(records) < n:
        raise ValueError(f"data has {len(records)} transitions, run.transitions asks for {n}")
    return records[:n], records[n:]


# --- stages -----------------------------------------------------------------------------


def stage_train_teacher(cfg: RunConfig):
    tcfg = cfg.teacher_config()
    manifest = cfg.manifest("train-teacher")
    if cfg["run.mode"] == "experience":
        ds = record_experience(cfg.env, tcfg, cfg["data.size"])
        teacher = ds.teacher
        # the training log is the experience dataset, so the collect stage comes for free
        dm = dict(cfg.manifest("collect"), data={"kind": "experience", "teacher": ds.teacher_fingerprint, "n": len(ds)})
        write_ndjson(cfg.path("data.ndjson"), ds.records, dm)
    else:
        teacher = train_teacher(cfg.env, tcfg)
    arpe = evaluation.play_eval(teacher, cfg.env, cfg["eval.play_episodes"], cfg["eval.play_seed"]).arpe
    log.info("teacher %s: ARPE %.2f", teacher.fingerprint(), arpe)
    write_json(cfg.path("teacher.json"), teacher.to_dict(), dict(manifest, arpe=arpe))
    if cfg["run.mode"] == "experience":
        return [cfg.path("teacher.json"), cfg.path("data.ndjson")]
    return [cfg.path("teacher.json")]


def stage_collect(cfg: RunConfig):
    manifest = cfg.manifest("collect")
    if cfg["run.mode"] == "experience":
        ds = record_experience(cfg.env, cfg.teacher_config(), cfg["data.size"])
        dm = dict(manifest, data={"kind": "experience", "teacher": ds.teacher_fingerprint, "n": len(ds)})
        write_ndjson(cfg.path("data.ndjson"), ds.records, dm)
        write_json(cfg.path("teacher.json"), ds.teacher.to_dict(), manifest)
        return [cfg.path("data.ndjson")]
    teacher = load_teacher(cfg.path("teacher.json"))
    n_train, n_test = cfg["run.transitions"], cfg["data.test_transitions"]
    stream = ActiveStream(make_env(cfg.env), teacher, n_train, cfg["run.batch_size"], cfg["run.seed"],
                          cfg["active.epsilon_start"], cfg["active.epsilon_end"], cfg["active.decay_fraction"])
    records = stream.take(n_train + n_test)
    stream.close()
    dm = dict(manifest, data={"kind": "active", "teacher": teacher.fingerprint(), "train": n_train, "test": n_test})
    write_ndjson(cfg.path("data.ndjson"), records, dm)
    return [cfg.path("data.ndjson")]


def fit_model(cfg: RunConfig, train, curve_out=None):
    """Train the configured mimic model on ``train`` (CUT ignores it and plays itself)."""
    spec = env_spec(cfg.env)
    kind = cfg["run.model"]
    if kind == "cut":
        return cut_learn(cfg.env, cfg["run.transitions"], cfg.cut_params(), cfg["run.seed"], cfg["run.batch_size"])
    if kind == "cart":
        return CartForest.fit(train, spec.feature_count, spec.action_count, cfg["cart.min_leaf"], cfg["cart.max_depth"])
    forest = LmutForest(spec.feature_count, spec.action_count, cfg.lmut_params())
    b = cfg["run.batch_size"]
    batches = [train[i:i + b] for i in range(0, len(train), b)]
    curve = evaluation.consecutive_test(forest, batches, cfg["eval.window"], len(train))
    for _ in range(cfg["run.passes"] - 1):
        for batch in batches:
            forest.learn(batch)
    if curve_out is not None:
        curve_out.extend(curve)
    return forest


def stage_mimic_train(cfg: RunConfig):
    manifest = cfg.manifest("mimic-train")
    train = []
    if cfg["run.model"] != "cut":
        train, _ = _split_records(cfg, read_ndjson(cfg.path("data.ndjson")))
    curve = []
    model = fit_model(cfg, train, curve)
    log.info("%s model: %d leaves", cfg["run.model"], model.leaf_count())
    write_json(cfg.path("model.json"), {"model": model.to_dict()}, manifest)
    written = [cfg.path("model.json")]
    if curve:
        path = cfg.path("curve.csv")
        evaluation.write_curve_csv(path, curve, _manifest_line(manifest))
        written.append(path)
        if cfg["report.figures"]:
            from . import plotting

            written.append(plotting.learning_curve({cfg["run.model"]: curve}, cfg.path("curve.png"),
                                                   title=f"{cfg.env}, {cfg['run.mode']} data"))
    return written


def stage_fidelity_eval(cfg: RunConfig):
    manifest = cfg.manifest("fidelity-eval")
    records = read_ndjson(cfg.path("data.ndjson"))
    _, test = _split_records(cfg, records)
    if not test:
        raise ValueError("no held-out transitions to evaluate (data.test_transitions is 0)")
    model = _load_model(cfg)
    rep = evaluation.model_fidelity(model, test)
    payload = {"setting": cfg["run.mode"], "model": cfg["run.model"], "test": rep.to_dict()}
    rows = [(cfg["run.mode"], cfg["run.model"], rep)]
    if cfg["eval.cv"] and cfg["run.mode"] == "experience":
        folds = []
        for k in range(cfg["eval.folds"]):
            tr, te = fold_split(records, k, cfg["eval.folds"])
            folds.append(evaluation.model_fidelity(fit_model(cfg, tr), te).to_dict())
            log.info("fold %d: rmse %.4f", k, folds[-1]["rmse"])
        payload["folds"] = folds
        payload["mean"] = {k: float(np.mean([f[k] for f in folds if f[k] is not None]))
                           for k in ("mae", "rmse", "rae", "rse", "leaf_count")}
    print(evaluation.fidelity_table(rows))
    write_json(cfg.path("fidelity.json"), payload, manifest)
    return [cfg.path("fidelity.json")]


def stage_play_eval(cfg: RunConfig):
    manifest = cfg.manifest("play-eval")
    episodes, seed = cfg["eval.play_episodes"], cfg["eval.play_seed"]
    model = _load_model(cfg)
    results = {cfg["run.model"]: evaluation.play_eval(model, cfg.env, episodes, seed)}
    if os.path.exists(cfg.path("teacher.json")):
        results["teacher"] = evaluation.play_eval(load_teacher(cfg.path("teacher.json")), cfg.env, episodes, seed)
    print(evaluation.play_table([(cfg.env, name, rep) for name, rep in results.items()]))
    write_json(cfg.path("play.json"), {name: rep.to_dict() for name, rep in results.items()}, manifest)
    written = [cfg.path("play.json")]
    if cfg["report.figures"]:
        from . import plotting

        written.append(plotting.play_bars({k: r.arpe for k, r in results.items()}, cfg.path("play.png"),
                                          title=f"{cfg.env} ARPE"))
    return written


def stage_interpret(cfg: RunConfig):
    manifest = cfg.manifest("interpret")
    model = _load_model(cfg)
    if not isinstance(model, LmutForest):
        raise ValueError(f"interpretation needs an LMUT model, model.json holds {cfg['run.model']}")
    spec = env_spec(cfg.env)
    table = interpret.feature_influence(model, spec.feature_names)
    table.write_csv(cfg.path("influence.csv"), _manifest_line(manifest))
    report = interpret.extract_rules(model, cfg["interpret.top_k"], spec.feature_names, spec.action_names)
    with open(cfg.path("rules.txt"), "w") as fh:
        fh.write(f"# {_manifest_line(manifest)}\n")
        fh.write(report.to_text())
    write_json(cfg.path("rules.json"), {"rules": json.loads(report.to_json())}, manifest)
    written = [cfg.path("influence.csv"), cfg.path("rules.txt"), cfg.path("rules.json")]
    figures = cfg["report.figures"]
    if figures:
        from . import plotting

        written.append(plotting.influence_bars(table, cfg.path("influence.png"), title=f"{cfg.env} feature influence"))
    if spec.pixel_shape is not None:
        written += _superpixel_report(cfg, model, spec, table, manifest, figures)
    return written


def _superpixel_report(cfg, model, spec, table, manifest, figures):
    probes = read_ndjson(cfg.path("data.ndjson"))[-cfg["interpret.probes"]:] if cfg["interpret.probes"] else []
    per_probe = [interpret.superpixels(model, r.obs, spec, table) for r in probes]
    union = sorted({p for px in per_probe for p in px})
    pooled = [p for px in per_probe for p in px]
    mask = interpret.pixel_masks(union, spec)
    mask_dir = cfg.path("masks")
    os.makedirs(mask_dir, exist_ok=True)
    written = []
    for k in range(spec.pixel_shape[0]):
        path = os.path.join(mask_dir, f"frame{k}.pgm")
        interpret.write_pgm(path, mask[k])
        written.append(path)
    payload = {
        "probes": len(probes),
        "pixels": [list(p) for p in union],
        "frame_share": [interpret.frame_share(union, k) for k in range(spec.pixel_shape[0])],
        # same, counting a pixel once per probe that highlights it
        "pooled_frame_share": [interpret.frame_share(pooled, k) for k in range(spec.pixel_shape[0])],
        "per_probe": [[list(p) for p in px] for px in per_probe],
    }
    written.append(write_json(cfg.path("superpixels.json"), payload, manifest))
    if figures and probes:
        from . import plotting

        obs = np.asarray(probes[0].obs).reshape(spec.pixel_shape)
        written.append(plotting.superpixel_figure(obs, interpret.pixel_masks(per_probe[0], spec),
                                                  cfg.path("superpixels.png")))
    return written


STAGE_FUNCS = {
    "train-teacher": stage_train_teacher,
    "collect": stage_collect,
    "mimic-train": stage_mimic_train,
    "fidelity-eval": stage_fidelity_eval,
    "play-eval": stage_play_eval,
    "interpret": stage_interpret,
}


def check_inputs(cfg: RunConfig, stage: str, pipeline=False):
    """Configuration errors that can be detected before any work starts."""
    if pipeline:
        if cfg["run.model"] != "lmut":
            raise ConfigError("the pipeline's interpret stage needs run.model = lmut")
        if cfg["teacher.path"] and cfg["run.mode"] == "active":
            _require(cfg["teacher.path"], "teacher file")
        return
    if stage == "collect" and cfg["run.mode"] == "active":
        _require(cfg.path("teacher.json"), "teacher file")
    if stage == "mimic-train" and cfg["run.model"] != "cut":
        _require(cfg.path("data.ndjson"), "data file")
    if stage in ("fidelity-eval", "play-eval", "interpret"):
        _require(cfg.path("model.json"), "model file")
    if stage == "fidelity-eval" or (stage == "interpret" and env_spec(cfg.env).pixel_shape is not None):
        _require(cfg.path("data.ndjson"), "data file")


def run_stage(cfg: RunConfig, stage: str):
    os.makedirs(cfg.out, exist_ok=True)
    log.info("running %s", stage)
    try:
        return STAGE_FUNCS[stage](cfg)
    except ConfigError:
        raise
    except (LmutError, ValueError, KeyError, OSError) as exc:
        raise StageFailure(stage, str(exc)) from exc


def run_pipeline(cfg: RunConfig):
    written = []
    skip_teacher = bool(cfg["teacher.path"]) and cfg["run.mode"] == "active"
    for stage in STAGES:
        if stage == "train-teacher" and skip_teacher:
            log.info("using teacher %s", cfg["teacher.path"])
            continue
        if is_fresh(cfg, stage):
            log.info("%s is up to date", stage)
            continue
        written += run_stage(cfg, stage)
    return written


# --- argument parsing ------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="lmutree", description="Linear model U-tree mimic learning.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*STAGES, "pipeline", "show-config"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("-v", "--verbose", action="store_true")
        for key in KEYS:
            p.add_argument(f"--{key}", dest=key, metavar="VALUE", default=None)
    return parser


def resolve(args) -> RunConfig:
    file_values = load_config(args.config) if args.config else {}
    cli_values = {k: getattr(args, k) for k in KEYS}
    return RunConfig(file_values, cli_values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve(args)
        if args.command == "show-config":
            sys.stdout.write(cfg.to_text())
            return EXIT_OK
        if args.command == "pipeline":
            check_inputs(cfg, None, pipeline=True)
            written = run_pipeline(cfg)
        else:
            check_inputs(cfg, args.command)
            written = run_stage(cfg, args.command)
    except ConfigError as exc:
        print(f"lmutree: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageFailure as exc:
        print(f"lmutree: {exc}", file=sys.stderr)
        return EXIT_STAGE
    for path in written:
        log.info("wrote %s", path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
