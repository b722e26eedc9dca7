"""Command-line surface: dataset synthesis, training, evaluation, spectra export.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Every command writes a `.manifest.json` next to its main artifact recording
the resolved configuration, input digests and produced files; re-running a
command with the manifest's settings reproduces the artifacts bit-identically.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint
from .data import (SpectralDataset, SplitSpec, load_dataset, make_synthetic,
                   normalize_pair, save_dataset, split_tttr)
from .errors import ContractError, DataError, MgsganError, NumericError, TrainingAborted
from .evaluation import ConfusionMatrix, EvalReport, mcnemar
from .models import predict_labels
from .training import MODES, TrainConfig, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """argparse with the package's exit-code contract (usage errors -> 1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(path: Path, command: str, settings: dict, inputs: dict, outputs: list):
    manifest = {
        "command": command,
        "settings": settings,
        "inputs": {k: _sha256_file(v) for k, v in inputs.items()},
        "outputs": [str(p) for p in outputs],
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise _UsageError(f"{flag}: expected comma-separated integers, got {text!r}")


def _load_config_file(path) -> dict:
    """key=value lines; '#' starts a comment. Flags override these values."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}: line {lineno}: expected key=value")
        key, val = line.split("=", 1)
        values[key.strip()] = val.strip()
    return values


def build_parser() -> _Parser:
    parser = _Parser(prog="mgsgan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a synthetic imbalanced dataset")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--bands", type=int, required=True)
    p.add_argument("--sizes", type=str, required=True, help="per-class sample counts, comma-separated")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--overlap", type=float, default=0.0)
    p.add_argument("--out", type=str, required=True, help="output path (.csv or .bin)")

    p = sub.add_parser("train", help="train one of mgsgan|acsgan|achsgan")
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--out", type=str, required=True, help="output directory")
    p.add_argument("--config", type=str, default=None, help="optional key=value config file")
    p.add_argument("--mode", type=str, choices=MODES, default=None)
    p.add_argument("--tttr", type=float, default=None)
    p.add_argument("--split-seed", type=int, default=None)
    p.add_argument("--seeds", type=str, default=None, help="run seeds, comma-separated")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--beta1", type=float, default=None)
    p.add_argument("--beta2", type=float, default=None)
    p.add_argument("--noise-dim", type=int, default=None)
    p.add_argument("--noise-dist", type=str, default=None)
    p.add_argument("--domain-margin", type=float, default=None)
    p.add_argument("--prior-mode", type=str, default=None)
    p.add_argument("--gen-loss", type=str, default=None)
    p.add_argument("--checkpoint-interval", type=int, default=None)

    p = sub.add_parser("eval", help="evaluate checkpoints on the held-out split")
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--run-dir", type=str, default=None, help="directory with seed_*/checkpoint.mgsg")
    p.add_argument("--checkpoint", type=str, default=None, help="single checkpoint file")
    p.add_argument("--tttr", type=float, required=True)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--compare", type=str, default=None,
                   help="second run dir or checkpoint for a McNemar comparison")
    p.add_argument("--out", type=str, required=True, help="report path prefix")

    p = sub.add_parser("export-spectra", help="per-class mean spectra: real vs generated")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--tttr", type=float, required=True)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=64, help="generated draws per class")
    p.add_argument("--classes", type=str, default="all",
                   help="class ids to export, comma-separated (default: all)")
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("--out", type=str, required=True, help="output CSV path")

    return parser


# ---------------------------------------------------------------------------
# commands

def _cmd_synth(args) -> int:
    sizes = _parse_int_list(args.sizes, "--sizes")
    if len(sizes) != args.classes:
        raise _UsageError(f"--sizes has {len(sizes)} entries for --classes {args.classes}")
    ds = make_synthetic(args.seed, args.classes, args.bands, sizes, overlap=args.overlap)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(out, ds)
    settings = {"classes": args.classes, "bands": args.bands, "sizes": sizes,
                "seed": args.seed, "overlap": args.overlap}
    _write_manifest(out.with_suffix(out.suffix + ".manifest.json"), "synth",
                    settings, {}, [out])
    print(f"wrote {out} ({ds.size} samples, {ds.class_count} classes, {ds.band_count} bands)")
    return EXIT_OK


_TRAIN_DEFAULTS = {
    "mode": "mgsgan", "tttr": 0.1, "split_seed": 0, "seeds": "0",
    "epochs": 1500, "batch": 64, "lr": 0.0002, "beta1": 0.5, "beta2": 0.999,
    "noise_dim": 100, "noise_dist": "normal", "domain_margin": 0.05,
    "prior_mode": "empirical", "gen_loss": "non-saturating", "checkpoint_interval": 0,
}


def _resolve_train_settings(args) -> dict:
    file_values = _load_config_file(args.config) if args.config else {}
    settings = {}
    for key, default in _TRAIN_DEFAULTS.items():
        flag = getattr(args, key)
        if flag is not None:
            settings[key] = flag
        elif key in file_values:
            raw = file_values[key]
            settings[key] = type(default)(raw) if not isinstance(default, str) else raw
        else:
            settings[key] = default
    return settings


def _prepared_split(data_path, tttr: float, split_seed: int):
    ds = load_dataset(data_path)
    train_raw, test_raw = split_tttr(ds, SplitSpec(tttr=tttr, seed=split_seed))
    return normalize_pair(train_raw, test_raw)


def _cmd_train(args) -> int:
    settings = _resolve_train_settings(args)
    seeds = _parse_int_list(str(settings["seeds"]), "--seeds")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_n, _test_n = _prepared_split(args.data, settings["tttr"], settings["split_seed"])
    outputs = []
    for seed in seeds:
        config = TrainConfig(
            epochs=settings["epochs"], batch=settings["batch"], lr=settings["lr"],
            beta1=settings["beta1"], beta2=settings["beta2"],
            noise_dim=settings["noise_dim"], seed=seed,
            domain_margin=settings["domain_margin"], prior_mode=settings["prior_mode"],
            gen_loss=settings["gen_loss"], mode=settings["mode"],
            noise_dist=settings["noise_dist"],
            checkpoint_interval=settings["checkpoint_interval"],
        )
        seed_dir = out_dir / f"seed_{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        try:
            result = train(train_n, config, checkpoint_dir=seed_dir)
        except TrainingAborted as exc:
            if exc.last_good is not None:
                (seed_dir / "checkpoint.aborted.mgsg").write_bytes(exc.last_good)
            print(f"training aborted: {exc} (last good checkpoint in {seed_dir})",
                  file=sys.stderr)
            raise
        ckpt = seed_dir / "checkpoint.mgsg"
        ckpt.write_bytes(result.checkpoint_bytes())
        (seed_dir / "runlog.jsonl").write_text(result.runlog.to_jsonl(), encoding="utf-8")
        (seed_dir / "runlog.timing.json").write_text(
            result.runlog.to_timing_json() + "\n", encoding="utf-8")
        outputs += [ckpt, seed_dir / "runlog.jsonl"]
        print(f"seed {seed}: wrote {ckpt}")
    _write_manifest(out_dir / "manifest.json", "train",
                    {**settings, "seeds": seeds}, {"data": args.data}, outputs)
    return EXIT_OK


def _discover_checkpoints(spec: str) -> list[Path]:
    p = Path(spec)
    if p.is_dir():
        found = sorted(p.glob("seed_*/checkpoint.mgsg"))
        if not found:
            raise DataError(f"{spec}: no seed_*/checkpoint.mgsg files found")
        return found
    if not p.exists():
        raise DataError(f"{spec}: no such checkpoint")
    return [p]


def _predictions_for(ckpt_path: Path, test_n: SpectralDataset) -> np.ndarray:
    ck = load_checkpoint(ckpt_path)
    if ck.d != test_n.band_count or ck.n_classes != test_n.class_count:
        raise DataError(
            f"{ckpt_path}: checkpoint is for d={ck.d}, N={ck.n_classes}; "
            f"data has d={test_n.band_count}, N={test_n.class_count}"
        )
    return predict_labels(ck.classifier, test_n.samples)


def _cmd_eval(args) -> int:
    if (args.run_dir is None) == (args.checkpoint is None):
        raise _UsageError("eval needs exactly one of --run-dir or --checkpoint")
    _train_n, test_n = _prepared_split(args.data, args.tttr, args.split_seed)
    ckpts = _discover_checkpoints(args.run_dir or args.checkpoint)
    seeds = [int(p.parent.name.removeprefix("seed_")) if p.parent.name.startswith("seed_") else i
             for i, p in enumerate(ckpts)]
    preds = [_predictions_for(p, test_n) for p in ckpts]
    cms = [ConfusionMatrix.from_predictions(test_n.labels, pr, test_n.class_count)
           for pr in preds]
    mode_name = load_checkpoint(ckpts[0]).mode
    report = EvalReport.from_runs(mode_name, cms, seeds)
    report.notes["tttr"] = args.tttr
    report.notes["split_seed"] = args.split_seed
    if args.compare:
        other = _discover_checkpoints(args.compare)[0]
        other_pred = _predictions_for(other, test_n)
        other_mode = load_checkpoint(other).mode
        report.mcnemar_vs[other_mode] = mcnemar(preds[0], other_pred, test_n.labels)
        report.notes["mcnemar_checkpoints"] = [str(ckpts[0]), str(other)]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    json_path = out.with_suffix(".json")
    table_path = out.with_suffix(".txt")
    json_path.write_text(report.to_json() + "\n", encoding="utf-8")
    table_path.write_text(report.to_table(), encoding="utf-8")
    inputs = {"data": args.data, **{f"ckpt_{i}": p for i, p in enumerate(ckpts)}}
    _write_manifest(out.with_suffix(".manifest.json"), "eval",
                    {"tttr": args.tttr, "split_seed": args.split_seed,
                     "compare": args.compare}, inputs, [json_path, table_path])
    print(report.to_table())
    return EXIT_OK


def _cmd_export_spectra(args) -> int:
    if args.samples < 1:
        raise _UsageError("--samples must be >= 1")
    ck = load_checkpoint(args.checkpoint)
    train_n, _test_n = _prepared_split(args.data, args.tttr, args.split_seed)
    if ck.d != train_n.band_count or ck.n_classes != train_n.class_count:
        raise DataError(
            f"{args.checkpoint}: checkpoint is for d={ck.d}, N={ck.n_classes}; "
            f"data has d={train_n.band_count}, N={train_n.class_count}"
        )
    if args.classes == "all":
        class_ids = list(range(ck.n_classes))
    else:
        class_ids = _parse_int_list(args.classes, "--classes")
        bad = [j for j in class_ids if not 0 <= j < ck.n_classes]
        if bad:
            raise ContractError(f"export-spectra: unknown class id {bad[0]} "
                                f"(checkpoint has {ck.n_classes} classes)")
    rng = np.random.default_rng([args.noise_seed, 20])
    lines = ["class,band,real_mean,generated_mean,box_lower,box_upper"]
    for j in class_ids:
        real_mean = train_n.samples[train_n.labels == j].mean(axis=0)
        z = rng.standard_normal((args.samples, ck.noise_dim))
        if ck.mode == "mgsgan":
            fake = ck.generator.generate(ad.const(z), j).data
        else:
            onehot = np.zeros((args.samples, ck.n_classes))
            onehot[:, j] = 1.0
            fake = ck.generator.forward(ad.const(np.concatenate([z, onehot], axis=1))).data
        gen_mean = fake.mean(axis=0)
        dom = ck.domains[j]
        for band in range(ck.d):
            vals = (float(real_mean[band]), float(gen_mean[band]),
                    float(dom.lower[band]), float(dom.upper[band]))
            lines.append(f"{j},{band}," + ",".join(repr(v) for v in vals))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_manifest(out.with_suffix(out.suffix + ".manifest.json"), "export-spectra",
                    {"samples": args.samples, "noise_seed": args.noise_seed,
                     "tttr": args.tttr, "split_seed": args.split_seed,
                     "classes": class_ids},
                    {"data": args.data, "checkpoint": args.checkpoint}, [out])
    print(f"wrote {out}")
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "export-spectra": _cmd_export_spectra,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingAborted, NumericError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ContractError as exc:
        print(f"invalid request: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MgsganError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
