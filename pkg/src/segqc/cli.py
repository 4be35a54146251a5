"""Command-line interface.

    segqc synth   --out DIR [--n-cases 40 --levels 5 ...]
    segqc score   --manifest DIR/manifest.csv --out DIR
    segqc maps    --samples S1 S2 ... --out DIR
    segqc errmap  --original IMG --recon REC --out DIR
    segqc train   --manifest M --cases cases.csv --pair-kind uncertainty --out DIR
    segqc predict --model model.json --manifest M --cases cases.csv --out DIR
    segqc gate    --cases cases.csv --score uncertainty_vs --threshold T --flag below --out DIR

Every option may also come from ``--config FILE`` (a JSON object whose
keys are the option names with dashes replaced by underscores); flags
override the file and unknown keys are rejected. Every run writes
``run_manifest.json`` into its output directory.

Exit status: 0 success, 2 bad configuration, 3 I/O or parse failure,
4 degenerate statistics, 5 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import __version__
from .errors import ConfigError, DegenerateInputError, InvariantError, SegQCError
from .gate import SCORE_KINDS, evaluate_gate, read_cohort_csv, write_cohort_csv
from .maps import entropy_map, error_map, mc_average, voxelwise_sum
from .pipeline import assign_folds, cohort_features, cross_validate, predict_cases, score_cohort
from .regressor import PAIR_KINDS, TrainConfig, load_model, save_model
from .report import write_report
from .synth import SynthParams, generate_cohort, q_ramp, read_manifest
from .volio import load_volume, save_volume

log = logging.getLogger("segqc")

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DEGENERATE = 4
EXIT_INTERNAL = 5

REPORT_SUFFIX = {"json": "json", "text": "txt", "csv": "csv"}


def _ints(text):
    return [int(t) for t in str(text).split(",")]


def _floats(text):
    return [float(t) for t in str(text).split(",")]


# option name -> (type, default, help); None default means required
COMMON = {
    "out": (str, None, "output directory"),
    "seed": (int, 0, "random seed"),
    "force": (bool, False, "replace existing output files"),
}
COMMANDS = {
    "synth": {
        "n_cases": (int, 40, "number of cases"),
        "levels": (int, 5, "number of q steps in the ramp (0 = continuous ramp)"),
        "q_schedule": (_floats, [], "explicit comma-separated q per case; overrides the ramp"),
        "shape": (_ints, [32, 32, 32], "grid shape nx,ny,nz"),
        "lesion_count": (_ints, [1, 5], "min,max lesions per case"),
        "lesion_radius": (_floats, [2.5, 5.0], "min,max lesion radius in voxels"),
        "samples": (int, 20, "MC samples per case"),
        "recon_noise": (float, 0.05, "reconstruction noise scale at q=1"),
        "format": (str, "rvol", "volume format: rvol or nii"),
    },
    "score": {
        "manifest": (str, None, "cohort manifest CSV"),
        "folds": (int, 5, "number of cross-validation folds (0 = none)"),
        "absolute_error": (bool, False, "sum |error| instead of signed error"),
    },
    "maps": {
        "samples": (lambda s: s, None, "sample probability maps"),
        "encoding": (str, "f32", "encoding of the written maps"),
    },
    "errmap": {
        "original": (str, None, "original image"),
        "recon": (str, None, "reconstructed image"),
        "absolute_error": (bool, False, "sum |error| instead of signed error"),
        "encoding": (str, "f32", "encoding of the written map"),
    },
    "train": {
        "manifest": (str, None, "cohort manifest CSV"),
        "cases": (str, None, "case CSV with true_dice and fold columns"),
        "pair_kind": (str, "uncertainty", "auxiliary map: image, uncertainty or error"),
        "folds": (int, 0, "reassign cases to this many folds (0 = keep the fold column)"),
        "delta": (float, 1.0, "Huber delta"),
        "epochs": (int, 200, "training epochs"),
        "batch_size": (int, 8, "mini-batch size"),
        "learning_rate": (float, 1e-3, "Adam learning rate"),
        "beta1": (float, 0.9, "Adam beta1"),
        "beta2": (float, 0.999, "Adam beta2"),
        "eps": (float, 1e-8, "Adam epsilon"),
        "hidden": (int, 16, "hidden layer width"),
    },
    "predict": {
        "model": (str, None, "model file written by train"),
        "manifest": (str, None, "cohort manifest CSV"),
        "cases": (str, None, "case CSV"),
    },
    "gate": {
        "cases": (str, None, "case CSV"),
        "score": (str, None, "score column: " + ", ".join(SCORE_KINDS)),
        "threshold": (float, None, "gate threshold"),
        "flag": (str, "below", "flag cases whose score is below or above the threshold"),
        "dice_fail": (float, 0.75, "true Dice under which a case counts as failed"),
        "positive": (str, "fail", "positive class for precision/recall: fail or pass"),
        "report_format": (str, "json,text", "comma-separated report formats: json, text, csv"),
    },
}
CHOICES = {
    "format": ("rvol", "nii"),
    "pair_kind": PAIR_KINDS,
    "score": SCORE_KINDS,
    "flag": ("below", "above"),
    "positive": ("fail", "pass"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segqc", description="Segmentation quality control toolkit")
    parser.add_argument("--version", action="version", version=f"segqc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, options in COMMANDS.items():
        p = sub.add_parser(name, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("-v", "--verbose", action="store_true")
        for key, (typ, default, help_) in {**COMMON, **options}.items():
            flag = "--" + key.replace("_", "-")
            if typ is bool:
                p.add_argument(flag, dest=key, action="store_true", help=help_)
            elif name == "maps" and key == "samples":
                p.add_argument(flag, dest=key, nargs="+", help=help_)
            else:
                p.add_argument(flag, dest=key, type=typ, choices=CHOICES.get(key), help=help_)
    return parser


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, config file values and flags (in increasing priority)."""
    options = {**COMMON, **COMMANDS[command]}
    values = {k: default for k, (_, default, _) in options.items()}
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            data = json.loads(Path(config_path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {config_path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(data) - set(options))
        if unknown:
            raise ConfigError(f"unknown config keys for '{command}': {', '.join(unknown)}")
        for key, value in data.items():
            typ = options[key][0]
            try:
                if typ is bool:
                    if not isinstance(value, bool):
                        raise ValueError(f"expected true or false, got {value!r}")
                elif isinstance(value, list) and typ in (_ints, _floats):
                    value = typ(",".join(str(v) for v in value))
                elif not (command == "maps" and key == "samples"):
                    value = typ(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from None
            if key in CHOICES and value not in CHOICES[key]:
                raise ConfigError(f"config key {key!r} must be one of {CHOICES[key]}, got {value!r}")
            values[key] = value
    for key in options:
        if hasattr(args, key):
            values[key] = getattr(args, key)
    missing = [k for k, v in values.items() if v is None]
    if missing:
        raise ConfigError(f"'{command}' needs: " + ", ".join("--" + k.replace("_", "-") for k in missing))
    return values


class Outputs:
    """Tracks files written by a run and refuses to overwrite without --force."""

    def __init__(self, out_dir, force: bool):
        self.dir = Path(out_dir)
        self.force = force
        self.written: list[str] = []
        self.dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.dir / name
        if p.exists() and not self.force:
            raise FileExistsError(f"{p} exists; pass --force to replace it")
        self.written.append(name)
        return p


def write_run_manifest(outputs: Outputs, command: str, config: dict, argv, extra=None) -> None:
    doc = {
        "tool": "segqc",
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "seed": config.get("seed"),
        "config": config,
        "outputs": list(outputs.written),
    }
    if extra:
        doc.update(extra)
    path = outputs.dir / "run_manifest.json"
    if path.exists() and not outputs.force:
        raise FileExistsError(f"{path} exists; pass --force to replace it")
    path.write_text(json.dumps(doc, indent=2, default=str) + "\n")


def _vol_name(stem: str, like: str) -> str:
    return stem + (".nii" if str(like).endswith(".nii") else ".rvol.json")


def cmd_synth(cfg, outputs):
    if cfg["q_schedule"]:
        qs = cfg["q_schedule"]
        if len(qs) != cfg["n_cases"]:
            raise ConfigError(f"--q-schedule has {len(qs)} values for {cfg['n_cases']} cases")
    else:
        qs = q_ramp(cfg["n_cases"], cfg["levels"] or None)
    try:
        params = SynthParams(
            shape=tuple(cfg["shape"]),
            lesion_count=tuple(cfg["lesion_count"]),
            lesion_radius=tuple(cfg["lesion_radius"]),
            n_samples=cfg["samples"],
            recon_noise=cfg["recon_noise"],
            seed=cfg["seed"],
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    outputs.path("manifest.csv")
    manifest = generate_cohort(params, cfg["n_cases"], qs, outputs.dir, cfg["format"])
    log.info("wrote %d cases to %s", cfg["n_cases"], manifest)
    return {"synth_params": asdict(params), "q_schedule": qs}


def cmd_score(cfg, outputs):
    entries = read_manifest(cfg["manifest"])
    cases = score_cohort(entries, cfg["folds"] or None, cfg["seed"], cfg["absolute_error"])
    write_cohort_csv(cases, outputs.path("cases.csv"))


def cmd_maps(cfg, outputs):
    samples = [load_volume(p)[1] for p in cfg["samples"]]
    meta = load_volume(cfg["samples"][0])[0]
    avg = mc_average(samples)
    unc = entropy_map(avg)
    first = cfg["samples"][0]
    save_volume(avg, outputs.path(_vol_name("average", first)), cfg["encoding"], meta=meta)
    save_volume(unc, outputs.path(_vol_name("uncertainty", first)), cfg["encoding"], meta=meta)
    vs = voxelwise_sum(unc)
    outputs.path("vs.json").write_text(json.dumps({"uncertainty_vs": vs}) + "\n")
    print(repr(vs))


def cmd_errmap(cfg, outputs):
    meta, original = load_volume(cfg["original"])
    recon = load_volume(cfg["recon"])[1]
    em = error_map(original, recon)
    save_volume(em, outputs.path(_vol_name("error", cfg["original"])), cfg["encoding"], meta=meta)
    vs = voxelwise_sum(em, absolute=cfg["absolute_error"])
    outputs.path("vs.json").write_text(json.dumps({"error_vs": vs, "absolute": cfg["absolute_error"]}) + "\n")
    print(repr(vs))


def _train_config(cfg) -> TrainConfig:
    try:
        return TrainConfig(
            learning_rate=cfg["learning_rate"], beta1=cfg["beta1"], beta2=cfg["beta2"], eps=cfg["eps"],
            epochs=cfg["epochs"], batch_size=cfg["batch_size"], delta=cfg["delta"], seed=cfg["seed"],
            hidden=cfg["hidden"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_train(cfg, outputs):
    tcfg = _train_config(cfg)
    cases = read_cohort_csv(cfg["cases"])
    if cfg["folds"]:
        assignment = assign_folds([c.id for c in cases], cfg["folds"], cfg["seed"])
        cases = [replace(c, fold=assignment[c.id]) for c in cases]
    entries = read_manifest(cfg["manifest"])
    features = cohort_features(entries, cfg["pair_kind"])
    missing = [c.id for c in cases if c.id not in features]
    if missing:
        raise KeyError(f"cases missing from manifest: {', '.join(missing)}")
    results, predicted = cross_validate(cases, features, tcfg, cfg["pair_kind"])
    folds = []
    for r in results:
        name = f"model_fold{r.fold}.json"
        save_model(r.model, outputs.path(name))
        folds.append({"fold": r.fold, "model": name, "train_ids": r.train_ids, "val_ids": r.val_ids,
                      "test_ids": r.test_ids, "val_mae": r.val_mae, "test_mae": r.test_mae,
                      "final_loss": r.history[-1]})
    write_cohort_csv(predicted, outputs.path("cases.csv"))
    outputs.path("train_summary.json").write_text(json.dumps({"folds": folds}, indent=2) + "\n")


def cmd_predict(cfg, outputs):
    model = load_model(cfg["model"])
    cases = read_cohort_csv(cfg["cases"])
    features = cohort_features(read_manifest(cfg["manifest"]), model.kind)
    missing = [c.id for c in cases if c.id not in features]
    if missing:
        raise KeyError(f"cases missing from manifest: {', '.join(missing)}")
    write_cohort_csv(predict_cases(model, cases, features), outputs.path("cases.csv"))


def cmd_gate(cfg, outputs):
    formats = [f.strip() for f in cfg["report_format"].split(",") if f.strip()]
    bad = [f for f in formats if f not in REPORT_SUFFIX]
    if bad or not formats:
        raise ConfigError(f"report formats must be among {sorted(REPORT_SUFFIX)}, got {cfg['report_format']!r}")
    cases = read_cohort_csv(cfg["cases"])
    report = evaluate_gate(cases, cfg["score"], cfg["threshold"], cfg["flag"], cfg["dice_fail"], cfg["positive"])
    if report.n_flagged > report.n_total:
        raise InvariantError("more cases flagged than scored")
    for fmt in formats:
        write_report(report, fmt, outputs.path(f"report.{REPORT_SUFFIX[fmt]}"))


HANDLERS = {
    "synth": cmd_synth,
    "score": cmd_score,
    "maps": cmd_maps,
    "errmap": cmd_errmap,
    "train": cmd_train,
    "predict": cmd_predict,
    "gate": cmd_gate,
}


def run(argv) -> int:
    """Parse ``argv`` and run one subcommand; return the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.command, args)
        outputs = Outputs(cfg["out"], cfg["force"])
        extra = HANDLERS[args.command](cfg, outputs)
        write_run_manifest(outputs, args.command, cfg, argv, extra)
    except ConfigError as exc:
        print(f"segqc: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DegenerateInputError as exc:
        print(f"segqc: degenerate statistics: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except InvariantError as exc:
        print(f"segqc: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (OSError, SegQCError, ValueError, KeyError, csv.Error) as exc:
        print(f"segqc: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001
        log.exception("unexpected failure")
        print(f"segqc: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return 0


def main(argv=None) -> None:
    sys.exit(run(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
