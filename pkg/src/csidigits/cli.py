"""Command-line entry point: convert, segment, analyze, synth, train-ae, train, eval.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure. Every artifact lands inside the ``--out`` directory.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .analysis import column_mean_profile, cross_mean_pcc, dtw_distance, spatial_corr_matrix, temporal_corr_matrix
from .autoencoder import AeConfig, denoise_dataset, train_autoencoder
from .errors import DataError, NumericError
from .model import (
    Dataset,
    SubcarrierLayout,
    load_checkpoint,
    parse_csi_file,
    read_sample_dir,
    save_checkpoint,
    write_csi_file,
    write_sample_dir,
)
from .neural import TrainConfig
from .preprocess import (
    SegmentationConfig,
    WaveletConfig,
    burr_exclusions,
    normalize_sample,
    segment,
    select_subcarriers,
    wavelet_denoise_sample,
)
from .synth import SynthSpec, generate, label_samples, spec_to_dict, stratified_split
from .tsnet import TsNetConfig, evaluate_topn, train_tsnet

log = logging.getLogger("csidigits")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

CONFIG_SECTIONS = {
    "segmentation": SegmentationConfig,
    "wavelet": WaveletConfig,
    "autoencoder": AeConfig,
    "tsnet": TsNetConfig,
    "train": TrainConfig,
    "synth": SynthSpec,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ----------------------------------------------------------------- config

def load_config(path: str | None) -> dict:
    """Read a JSON config of ``{section: {field: value}}``; unknown names are rejected."""
    if path is None:
        return {name: cls() for name, cls in CONFIG_SECTIONS.items()}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError("config must be a JSON object")
    unknown = set(raw) - set(CONFIG_SECTIONS)
    if unknown:
        raise UsageError(f"unknown config sections: {', '.join(sorted(unknown))}")
    out = {}
    for name, cls in CONFIG_SECTIONS.items():
        section = raw.get(name, {})
        allowed = {f.name for f in fields(cls)}
        bad = set(section) - allowed
        if bad:
            raise UsageError(f"unknown keys in [{name}]: {', '.join(sorted(bad))}")
        try:
            out[name] = cls(**section)
        except (TypeError, DataError) as exc:
            raise UsageError(f"invalid [{name}] config: {exc}") from exc
    return out


def _override(cfg, **values):
    values = {k: v for k, v in values.items() if v is not None}
    return replace(cfg, **values) if values else cfg


# ----------------------------------------------------------------- helpers

def _out_dir(args) -> Path:
    if not args.out:
        raise UsageError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


def _fmt(x: float) -> str:
    return repr(float(x))


def _read_sequence(path: str):
    try:
        return parse_csi_file(Path(path).read_bytes())
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc


def _read_samples(path: str) -> Dataset:
    if not Path(path).is_dir():
        raise DataError(f"{path} is not a sample directory")
    return read_sample_dir(path)


def _load_ckpt(path: str):
    try:
        return load_checkpoint(Path(path).read_bytes())
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc


def _maybe_denoise(dataset: Dataset, ae: str | None) -> Dataset:
    if ae is None or ae.lower() == "none":
        return dataset
    return denoise_dataset(dataset, _load_ckpt(ae))


def _read_truth(path: str) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "window" not in rows[0] or "label" not in rows[0]:
        raise DataError(f"{path} needs 'window' and 'label' columns")
    labels = np.full(max(int(r["window"]) for r in rows) + 1, -1, dtype=np.int64)
    for r in rows:
        labels[int(r["window"])] = int(r["label"])
    return labels


# ----------------------------------------------------------------- commands

def cmd_synth(args, cfg) -> None:
    spec = cfg["synth"]
    if args.spec:
        try:
            raw = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read spec {args.spec}: {exc}") from exc
        bad = set(raw) - {f.name for f in fields(SynthSpec)}
        if bad:
            raise UsageError(f"unknown synth spec keys: {', '.join(sorted(bad))}")
        spec = SynthSpec(**{**asdict(spec), **raw})
    spec = _override(spec, seed=args.seed)
    out = _out_dir(args)
    cap = generate(spec)
    (out / "csi.csv").write_bytes(write_csi_file(cap.sequence))
    names = spec.class_names
    _write_csv(out / "truth.csv", ["window", "label", "class", "t_start_us"],
               [[w, int(c), names[c], int(round(w * spec.window_seconds * 1e6))]
                for w, c in enumerate(cap.window_labels)])
    (out / "spec.json").write_text(json.dumps(spec_to_dict(spec), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    log.info("wrote %d frames, %d windows to %s", len(cap.sequence), len(cap.window_labels), out)


def _layout_for(width: int, args) -> SubcarrierLayout:
    if args.keep_all or width != 64:
        return SubcarrierLayout.raw(width)
    return SubcarrierLayout.bw20(exclude_pilots=args.exclude_pilots)


def cmd_convert(args, cfg) -> None:
    seq = _read_sequence(args.input)
    layout = _layout_for(seq.width, args)
    if args.burr_silence:
        layout = burr_exclusions(_read_sequence(args.burr_silence), layout, args.burr_percentile)
    out = _out_dir(args)
    selected = select_subcarriers(seq, layout)
    (out / "csi.csv").write_bytes(write_csi_file(selected))
    (out / "layout.json").write_text(json.dumps({
        "total_subcarriers": layout.total_subcarriers,
        "excluded_indices": list(layout.excluded_indices),
        "retained_count": layout.retained_count,
    }, indent=2) + "\n", encoding="utf-8")
    log.info("kept %d of %d subcarriers", layout.retained_count, layout.total_subcarriers)


def cmd_segment(args, cfg) -> None:
    seq = _read_sequence(args.input)
    if seq.width == 64 and not args.keep_all:
        seq = select_subcarriers(seq, SubcarrierLayout.bw20(exclude_pilots=args.exclude_pilots))
    seg = _override(cfg["segmentation"], window_seconds=args.window_seconds, n_norm=args.n_norm)
    wave = _override(cfg["wavelet"], enabled=True if args.wavelet else None)
    samples = segment(seq, seg)
    if args.truth:
        samples = label_samples(samples, _read_truth(args.truth))
        samples = [s for s in samples if s.label is not None and s.label >= 0]
    samples = [normalize_sample(wavelet_denoise_sample(s, wave)) for s in samples]
    if not samples:
        raise DataError("segmentation produced no samples")
    class_names = cfg["synth"].class_names
    if args.truth:
        class_names = _class_names_from_truth(args.truth) or class_names
    dataset = Dataset(tuple(samples), class_names)
    out = _out_dir(args)
    if args.test_fraction:
        if not args.truth:
            raise UsageError("--test-fraction needs --truth labels")
        seed = args.seed if args.seed is not None else 0
        train, test = stratified_split(dataset, args.test_fraction, seed)
        write_sample_dir(train, out / "train")
        write_sample_dir(test, out / "test")
        log.info("wrote %d train and %d test samples", len(train), len(test))
    else:
        write_sample_dir(dataset, out / "samples")
        log.info("wrote %d samples", len(dataset))


def _class_names_from_truth(path: str):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "class" not in rows[0]:
        return None
    names = {int(r["label"]): r["class"] for r in rows}
    if sorted(names) != list(range(len(names))):
        return None
    return tuple(names[k] for k in range(len(names)))


def cmd_analyze(args, cfg) -> None:
    ds = _read_samples(args.input)
    if not 0 <= args.index < len(ds):
        raise DataError(f"sample index {args.index} outside [0, {len(ds)})")
    out = _out_dir(args)
    values = ds.samples[args.index].values
    t = temporal_corr_matrix(values)
    s = spatial_corr_matrix(values)
    _write_csv(out / "temporal_corr.csv", [f"s{j}" for j in range(t.dim)], [[_fmt(v) for v in row] for row in t.values])
    _write_csv(out / "spatial_corr.csv", [f"r{j}" for j in range(s.dim)], [[_fmt(v) for v in row] for row in s.values])
    _write_csv(out / "temporal_profile.csv", ["subcarrier", "mean_corr"],
               [[j, _fmt(v)] for j, v in enumerate(column_mean_profile(t))])
    _write_csv(out / "spatial_profile.csv", ["row", "mean_corr"],
               [[j, _fmt(v)] for j, v in enumerate(column_mean_profile(s))])
    labelled = [k for k, smp in enumerate(ds.samples) if smp.label is not None]
    if not labelled:
        return
    # one representative (the first) per class keeps the pairwise tables cheap
    reps = {}
    for k in labelled:
        reps.setdefault(ds.samples[k].label, ds.samples[k].values)
    classes = sorted(reps)
    names = ds.class_names
    rows = []
    for a in classes:
        for b in classes:
            row = [names[a], names[b], _fmt(cross_mean_pcc(reps[a], reps[b]))]
            if args.dtw:
                row.append(_fmt(dtw_distance(reps[a], reps[b])))
            rows.append(row)
    header = ["class_a", "class_b", "cross_mean_pcc"] + (["dtw"] if args.dtw else [])
    _write_csv(out / "class_similarity.csv", header, rows)


def _train_config(cfg, args) -> TrainConfig:
    return _override(cfg["train"], epochs=args.epochs, seed=args.seed, learning_rate=args.lr,
                      batch_size=args.batch_size)


def cmd_train_ae(args, cfg) -> None:
    ds = _read_samples(args.input)
    ae_cfg = _override(cfg["autoencoder"], xi=args.xi, loss_variant=args.loss_variant, recon_weight=args.recon_weight)
    tc = _train_config(cfg, args)
    ckpt, hist = train_autoencoder(ds, ae_cfg, tc, progress=lambda r: log.info("epoch %d loss %.5f", r.epoch, r.loss))
    out = _out_dir(args)
    (out / "ae.ckpt").write_bytes(save_checkpoint(ckpt))
    _write_csv(out / "ae_history.csv", ["epoch", "loss", "mse", "contrastive"],
               [[h.epoch, _fmt(h.loss), _fmt(h.mse), _fmt(h.contrastive)] for h in hist])


def cmd_train(args, cfg) -> None:
    ds = _maybe_denoise(_read_samples(args.input), None if args.no_ae else args.ae)
    ts_cfg = cfg["tsnet"]
    if args.alpha is not None or args.beta is not None:
        alpha = args.alpha if args.alpha is not None else 1.0 - (args.beta if args.beta is not None else ts_cfg.beta)
        beta = args.beta if args.beta is not None else 1.0 - alpha
        ts_cfg = replace(ts_cfg, alpha=alpha, beta=beta)
    tc = _train_config(cfg, args)
    ckpt, hist = train_tsnet(ds, ts_cfg, tc,
                             progress=lambda r: log.info("epoch %d loss %.5f train P1 %.3f", r.epoch, r.loss, r.train_p1))
    out = _out_dir(args)
    (out / "tsnet.ckpt").write_bytes(save_checkpoint(ckpt))
    _write_csv(out / "history.csv", ["epoch", "loss", "train_p1"],
               [[h.epoch, _fmt(h.loss), _fmt(h.train_p1)] for h in hist])


def cmd_eval(args, cfg) -> None:
    ckpt = _load_ckpt(args.checkpoint)
    ds = _maybe_denoise(_read_samples(args.input), None if args.no_ae else args.ae)
    report = evaluate_topn(ckpt, ds, args.topn)
    out = _out_dir(args)
    rows = [["all"] + [_fmt(p) for p in report.overall]]
    if args.per_class:
        for c, p in sorted(report.per_class.items()):
            rows.append([report.class_names[c]] + [_fmt(v) for v in p])
    _write_csv(out / "topn.csv", ["class"] + [f"P{n}" for n in range(1, args.topn + 1)], rows)
    if not args.quiet:
        print(" ".join(f"P{n}={p:.4f}" for n, p in enumerate(report.overall, 1)))


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    def global_flags(suppress: bool) -> argparse.ArgumentParser:
        # flags may come before or after the subcommand; the copy on each
        # subcommand must not clobber a value given before it
        p = argparse.ArgumentParser(add_help=False)
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        p.add_argument("--seed", type=int, default=d(None), help="seed for every random draw (default 0)")
        p.add_argument("--threads", type=int, default=d(None), help="cap on BLAS worker threads (default: all cores)")
        p.add_argument("--config", default=d(None), help="JSON config with sections " + ", ".join(CONFIG_SECTIONS))
        p.add_argument("--out", default=d(None), help="output directory; nothing is written outside it")
        p.add_argument("--quiet", action="store_true", default=d(False), help="suppress progress output")
        return p

    common = global_flags(suppress=True)
    parser = _Parser(prog="csidigits", description=__doc__.splitlines()[0], parents=[global_flags(False)])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def layout_flags(p):
        p.add_argument("--keep-all", action="store_true", help="keep guard bands and DC")
        p.add_argument("--exclude-pilots", action="store_true", help="also drop the four pilot subcarriers")

    p = sub.add_parser("synth", parents=[common], help="generate a labelled synthetic capture")
    p.add_argument("--spec", help="JSON file of generator fields overriding the defaults")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("convert", parents=[common], help="select subcarriers from a raw CSI CSV")
    p.add_argument("input")
    layout_flags(p)
    p.add_argument("--burr-silence", help="silence capture used to flag noisy subcarriers")
    p.add_argument("--burr-percentile", type=float, default=99.0)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("segment", parents=[common], help="cut a capture into normalized samples")
    p.add_argument("input")
    layout_flags(p)
    p.add_argument("--truth", help="CSV with window,label columns")
    p.add_argument("--test-fraction", type=float, default=0.0, help="held-out share per class (needs --truth)")
    p.add_argument("--window-seconds", type=float)
    p.add_argument("--n-norm", type=int)
    p.add_argument("--wavelet", action="store_true", help="wavelet-denoise each subcarrier before normalizing")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("analyze", parents=[common], help="correlation matrices and class similarity tables")
    p.add_argument("input", help="sample directory")
    p.add_argument("--index", type=int, default=0, help="sample used for the correlation matrices")
    p.add_argument("--dtw", action="store_true", help="add a DTW column to the class table")
    p.set_defaults(func=cmd_analyze)

    def train_flags(p):
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", type=int)

    p = sub.add_parser("train-ae", parents=[common], help="train the contrastive denoising autoencoder")
    p.add_argument("input", help="sample directory")
    p.add_argument("--xi", type=float)
    p.add_argument("--loss-variant", choices=["CorrectedDistance", "PaperLiteral"])
    p.add_argument("--recon-weight", type=float)
    train_flags(p)
    p.set_defaults(func=cmd_train_ae)

    def ae_flags(p):
        p.add_argument("--ae", default="none", help="autoencoder checkpoint applied first, or 'none'")
        p.add_argument("--no-ae", action="store_true", help="same as --ae none")

    p = sub.add_parser("train", parents=[common], help="train the fused temporal/spatial classifier")
    p.add_argument("input", help="sample directory")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    ae_flags(p)
    train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="top-N accuracy of a classifier checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("input", help="sample directory")
    p.add_argument("--topn", type=int, default=5)
    p.add_argument("--per-class", action="store_true")
    ae_flags(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    try:
        cfg = load_config(args.config)
        # overflow surfaces as a NumericError from the finite-loss checks
        with threadpool_limits(limits=args.threads), np.errstate(over="ignore", invalid="ignore"):
            args.func(args, cfg)
    except UsageError as exc:
        print(f"csidigits: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"csidigits: numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"csidigits: data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
