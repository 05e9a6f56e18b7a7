"""Command-line pipeline: simulate -> train -> eval -> report, plus sweep and profile checks.

Exit codes: 0 success, 2 configuration error, 3 I/O error or missing
artifact, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

from threadpoolctl import threadpool_limits

from .channel import ProfileError, load_profile, simulate_csi
from .config import PRESETS, ConfigError, RunConfig, build_run_config, normalize_variant
from .container import ContainerError
from .dataset import blocks_for, dataset_from_csi, load_dataset, save_dataset
from .estimator import ModelSpec, NonFiniteError, load_checkpoint, save_checkpoint
from .evaluation import EvalReport, Experiment, evaluate, subcarrier_sweep
from .report import render_report
from .trainer import DivergenceError, train

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class MissingArtifact(OSError):
    pass


class BadArtifact(OSError):
    """An input file exists but cannot be parsed."""


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="JSON run configuration")
    p.add_argument("--seed", type=int, default=S, help="overrides every seed in the config")
    p.add_argument("--out-dir", default=S)
    p.add_argument("--preset", choices=sorted(PRESETS), default=S)
    p.add_argument("--threads", type=int, default=S, help="BLAS thread count")
    p.add_argument("-v", "--verbose", action="store_true", default=S)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="bfmlab", parents=[common],
                                     description="CSI amplitude recovery from beamforming feedback")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate channels and write a dataset")
    p.add_argument("--n-samples", type=int)
    p.add_argument("--group-size", type=int)
    p.add_argument("--profile")
    p.add_argument("--output", help="dataset path (default <out-dir>/dataset_g<g>.bfmc)")

    p = sub.add_parser("train", parents=[common], help="train an estimator on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--variant", help="cnn or cnn-convlstm")
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--dtype", choices=("float32", "float64"))

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test")

    p = sub.add_parser("sweep", parents=[common], help="train/evaluate CNNs over subcarrier group sizes")
    p.add_argument("--n-samples", type=int)
    p.add_argument("--group-sizes", help="comma-separated divisors of the subcarrier count")
    p.add_argument("--max-epochs", type=int)

    p = sub.add_parser("report", parents=[common], help="render CSV/SVG reports from eval outputs")
    p.add_argument("evals", nargs="+", help="eval_*.json files")
    p.add_argument("--sweep", help="sweep CSV to draw as the error-vs-group-size figure")

    p = sub.add_parser("validate-profile", parents=[common], help="check a power-delay profile")
    p.add_argument("profile")
    return parser


def _run_config(args, fixed: dict | None = None, **extra) -> RunConfig:
    overrides: dict = {"sim": {}, "train": {}, **(fixed or {})}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out_dir", None) is not None:
        overrides["out_dir"] = args.out_dir
    for key, (section, name) in extra.items():
        value = getattr(args, key, None)
        if value is not None:
            if section:
                overrides[section][name] = value
            else:
                overrides[name] = value
    return build_run_config(getattr(args, "preset", None), getattr(args, "config", None), overrides)


def _require(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifact(f"missing artifact: {path}")
    return path


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def metrics_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "group_size", "split", "n_samples", "mean", "q25", "q50", "q75"])
    w.writerow([report.variant, report.group_size, report.metadata.get("split", ""),
                len(report.errors), repr(report.mean),
                *(repr(report.quantile(q)) for q in (0.25, 0.5, 0.75))])
    return buf.getvalue()


def _write_eval(out: Path, report: EvalReport) -> list[Path]:
    tag = f"{report.variant}_{report.group_size}"
    paths = [out / f"eval_{tag}.json", out / f"metrics_{tag}.csv"]
    paths[0].write_text(report.to_json(), encoding="utf-8")
    paths[1].write_text(metrics_csv(report), encoding="utf-8")
    return paths


def cmd_simulate(args) -> int:
    cfg = _run_config(args, n_samples=("sim", "n_samples"), group_size=(None, "group_size"),
                      profile=(None, "profile"))
    profile = load_profile(cfg.profile)
    g = cfg.effective_group_size
    ds = dataset_from_csi(simulate_csi(profile, cfg.sim), cfg.sim, profile.name, g)
    path = Path(args.output) if args.output else _out_dir(cfg) / f"dataset_g{g}.bfmc"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(path, ds)
    m = ds.manifest
    print(f"wrote {path}: {m['n_samples']} realizations, {m['n_items']} samples of {g} subcarriers "
          f"(train/val/test items {m['splits']['train']}/{m['splits']['val']}/{m['splits']['test']}), "
          f"scale {m['scale']:.6g}, sha256 {ds.digest()[:16]}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args, variant=(None, "variant"), max_epochs=("train", "max_epochs"),
                      dtype=("train", "dtype"))
    ds = load_dataset(_require(args.dataset))
    variant = normalize_variant(cfg.variant)
    spec = ModelSpec.for_group(variant, ds.group_size, ds.freq_bins,
                               n_blocks=blocks_for(ds.freq_bins), n_pairs=int(ds.inputs.shape[2]),
                               **cfg.model)
    weights, record = train(ds, spec, cfg.train)
    out = _out_dir(cfg)
    tag = f"{variant}_{ds.group_size}"
    ckpt = out / f"checkpoint_{tag}.bfmw"
    save_checkpoint(ckpt, weights, spec, {"train": cfg.train.to_json(), "best_epoch": record.best_epoch,
                                          "stop_reason": record.stop_reason,
                                          "dataset_sha256": ds.digest()})
    (out / f"train_{tag}.csv").write_text(record.to_csv(), encoding="utf-8")
    print(f"wrote {ckpt}: {record.epochs} epochs, stop={record.stop_reason}, "
          f"best epoch {record.best_epoch}, val loss {min(record.val_loss):.6g}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    weights, spec, extra = load_checkpoint(_require(args.checkpoint))
    ds = load_dataset(_require(args.dataset))
    if (spec.freq_bins, spec.n_pairs) != (ds.freq_bins, ds.inputs.shape[2]):
        raise ConfigError("checkpoint and dataset shapes disagree")
    report = evaluate(weights, spec, ds, args.split)
    paths = _write_eval(_out_dir(cfg), report)
    print(f"{report.variant} g={report.group_size}: mean Frobenius error {report.mean:.6g} "
          f"over {len(report.errors)} samples -> {paths[0]}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    fixed = {}
    if args.group_sizes:
        try:
            fixed["group_sizes"] = [int(s) for s in args.group_sizes.split(",")]
        except ValueError:
            raise ConfigError(f"bad --group-sizes {args.group_sizes!r}") from None
    cfg = _run_config(args, fixed, n_samples=("sim", "n_samples"), max_epochs=("train", "max_epochs"))
    profile = load_profile(cfg.profile)
    exp = Experiment(simulate_csi(profile, cfg.sim), cfg.sim, profile.name, cfg.train, **cfg.model)
    rows = subcarrier_sweep(exp, cfg.group_sizes, variant="cnn")
    out = _out_dir(cfg)
    for r in rows:
        _write_eval(out, r.report)
        print(f"g={r.group_size:4d}  samples={r.n_items:7d}  label entries={r.label_entries}  "
              f"mean error={r.mean_error:.6g}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group_size", "mean_frobenius_error", "n_samples", "label_entries"])
    for r in rows:
        w.writerow([r.group_size, repr(r.mean_error), r.n_items, r.label_entries])
    (out / "sweep_cnn.csv").write_text(buf.getvalue(), encoding="utf-8")
    render_report([r.report for r in rows], out, [(r.group_size, r.mean_error) for r in rows])
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _run_config(args)
    reports = []
    for p in args.evals:
        try:
            reports.append(EvalReport.from_json(_require(p).read_text("utf-8")))
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise BadArtifact(f"unreadable eval file {p}: {exc}") from None
    sweep = None
    if args.sweep:
        try:
            with open(_require(args.sweep), newline="", encoding="utf-8") as fh:
                sweep = [(int(r["group_size"]), float(r["mean_frobenius_error"]))
                         for r in csv.DictReader(fh)]
        except (ValueError, KeyError, TypeError) as exc:
            raise BadArtifact(f"unreadable sweep file {args.sweep}: {exc}") from None
    paths = render_report(reports, _out_dir(cfg), sweep)
    print(f"wrote {len(paths)} report files to {cfg.out_dir}")
    return EXIT_OK


def cmd_validate_profile(args) -> int:
    _run_config(args)
    profile = load_profile(args.profile)
    print(f"profile {profile.name}: {profile.n_taps} taps")
    for d, db, p in zip(profile.delays_ns, profile.powers_db, profile.powers):
        print(f"  {d:8.2f} ns  {db:9.4f} dB  normalized power {p:.6f}")
    print(f"  sum of normalized powers {profile.powers.sum():.12f}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep,
            "report": cmd_report, "validate-profile": cmd_validate_profile}


def _threads(n: int | None):
    if n is None:
        return nullcontext()
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _threads(getattr(args, "threads", None)):
            return COMMANDS[args.command](args)
    except (ConfigError, ProfileError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, NonFiniteError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ContainerError, KeyError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
