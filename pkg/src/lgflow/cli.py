"""Command-line front end: synth, train, diagnose, detect, eval, grid, plotdata.

Every file written here starts with a ``# format_version=1`` comment line
(CSV) or carries a ``format_version`` key (JSON). Exit codes: 0 success,
1 usage error, 2 data or format error, 3 numeric failure.
"""

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import __version__
from .detector import detect, fit_diagnostic, latent_trajectory
from .gof import GofConfig
from .metrics import evaluate, write_reports
from .synth import REFERENCE_ANOMALIES, AnomalySpec, SignalSpec, generate_base, inject_anomaly
from .training import (
    TrainConfig,
    TrainingDiverged,
    grid_configs,
    load_checkpoint,
    prepare_observations,
    save_checkpoint,
    train,
    write_loss_csv,
)

FORMAT_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# --- RunConfig -------------------------------------------------------------

@dataclass
class DetectorConfig:
    w: int = 64
    stride: int = 1
    fit_stride: int = None  # None = non-overlapping (stride = w)
    margin: float = 0.05

    def __post_init__(self):
        if self.w < 1 or self.stride < 1:
            raise ValueError("w and stride must be >= 1")
        if self.fit_stride is not None and self.fit_stride < 1:
            raise ValueError("fit_stride must be >= 1")
        if not 0.0 <= self.margin < 1.0:
            raise ValueError("margin must lie in [0, 1)")


@dataclass
class RunConfig:
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    gof: GofConfig = field(default_factory=GofConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    signal: SignalSpec = field(default_factory=SignalSpec)
    anomalies: list = field(default_factory=lambda: list(REFERENCE_ANOMALIES))
    grid: dict = field(default_factory=dict)


def _section(cls, data, where):
    if not isinstance(data, dict):
        raise DataError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise DataError(f"{where}: unknown keys {unknown}")
    kw = {}
    for k, v in data.items():
        kw[k] = tuple(v) if isinstance(v, list) else v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as err:
        raise DataError(f"{where}: {err}") from err


def run_config_from_dict(d):
    """Validate a RunConfig document. A top-level ``seed`` fills any section seed left unset."""
    if not isinstance(d, dict):
        raise DataError("run config must be a JSON object")
    allowed = {"format_version", "seed", "train", "gof", "detector", "signal", "anomalies", "grid"}
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise DataError(f"run config: unknown keys {unknown}")
    version = d.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported run config format_version {version!r}")
    seed = d.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise DataError("seed must be a non-negative integer")
    tr, sig = d.get("train", {}), d.get("signal", {})
    if isinstance(tr, dict):
        tr = {"seed": seed, **tr}
    if isinstance(sig, dict):
        sig = {"seed": seed, **sig}
    anomalies = d.get("anomalies")
    if anomalies is None:
        anomalies = list(REFERENCE_ANOMALIES)
    elif not isinstance(anomalies, list):
        raise DataError("anomalies must be a list")
    else:
        anomalies = [_section(AnomalySpec, a, f"anomalies[{i}]") for i, a in enumerate(anomalies)]
    grid = d.get("grid", {})
    if not isinstance(grid, dict) or not all(isinstance(v, list) and v for v in grid.values()):
        raise DataError("grid must map TrainConfig fields to non-empty lists")
    cfg = RunConfig(
        seed=seed,
        train=_section(TrainConfig, tr, "train"),
        gof=_section(GofConfig, d.get("gof", {}), "gof"),
        detector=_section(DetectorConfig, d.get("detector", {}), "detector"),
        signal=_section(SignalSpec, sig, "signal"),
        anomalies=anomalies,
        grid=grid,
    )
    try:
        grid_configs(cfg.train, grid)
    except (TypeError, ValueError) as err:
        raise DataError(f"grid: {err}") from err
    return cfg


def run_config_to_dict(cfg):
    return {
        "format_version": FORMAT_VERSION,
        "seed": cfg.seed,
        "train": asdict(cfg.train),
        "gof": asdict(cfg.gof),
        "detector": asdict(cfg.detector),
        "signal": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg.signal).items()},
        "anomalies": [asdict(a) for a in cfg.anomalies],
        "grid": cfg.grid,
    }


def load_run_config(path):
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            return run_config_from_dict(json.load(fh))
    except json.JSONDecodeError as err:
        raise DataError(f"{path}: invalid JSON ({err})") from err


# --- SeriesFile and other tabular formats -----------------------------------

def _read_table(path):
    """Return (meta, header, rows); ``# key=value`` lines before the header become meta."""
    meta = {}
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            key, sep, val = line[1:].strip().partition("=")
            if sep:
                meta[key.strip()] = val.strip()
        elif line.strip():
            body.append(line)
    if not body:
        raise DataError(f"{path}: no header row")
    version = meta.get("format_version")
    if version is not None and version != str(FORMAT_VERSION):
        raise DataError(f"{path}: unsupported format_version {version}")
    reader = csv.reader(body)
    header = [h.strip() for h in next(reader)]
    rows = list(reader)
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise DataError(f"{path}: row {i + 1} has {len(r)} columns, header has {len(header)}")
    return meta, header, rows


def _column(header, rows, name, path, dtype=float):
    try:
        j = header.index(name)
    except ValueError:
        raise DataError(f"{path}: missing column {name!r}") from None
    try:
        return np.array([dtype(r[j]) for r in rows])
    except ValueError as err:
        raise DataError(f"{path}: bad value in column {name!r} ({err})") from err


def _check_time(t, path):
    if len(t) == 0:
        raise DataError(f"{path}: no data rows")
    if t[0] != 0 or np.any(np.diff(t) <= 0):
        raise DataError(f"{path}: t must start at 0 and increase strictly")


def _parse_labels(header, rows, path):
    if "label" not in header:
        return None
    lab = _column(header, rows, "label", path)
    if not np.all((lab == 0) | (lab == 1)):
        raise DataError(f"{path}: labels must be 0 or 1")
    return lab.astype(np.int64)


def read_series(path):
    """SeriesFile -> (values (T, D), labels or None, meta)."""
    meta, header, rows = _read_table(path)
    xs = [h for h in header if h.startswith("x")]
    expected = [f"x{i}" for i in range(len(xs))]
    if not xs or xs != expected:
        raise DataError(f"{path}: value columns must be x0..x{{D-1}}, got {xs}")
    extra = set(header) - set(xs) - {"t", "label"}
    if extra:
        raise DataError(f"{path}: unexpected columns {sorted(extra)}")
    t = _column(header, rows, "t", path, int)
    _check_time(t, path)
    values = np.column_stack([_column(header, rows, c, path) for c in xs])
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: non-finite values")
    return values, _parse_labels(header, rows, path), meta


def _write_csv(path, meta, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# format_version={FORMAT_VERSION}\n")
        for k, v in meta.items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_series(path, values, labels=None, meta=None):
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    header = ["t"] + [f"x{i}" for i in range(values.shape[1])]
    if labels is not None:
        header.append("label")
    rows = []
    for t, v in enumerate(values):
        row = [t] + [repr(float(a)) for a in v]
        if labels is not None:
            row.append(int(labels[t]))
        rows.append(row)
    _write_csv(path, meta or {}, header, rows)


def write_detection(path, result, meta):
    header = ["t", "ks_score", "ks_flag", "nll_score"]
    if result.labels is not None:
        header.append("label")
    rows = []
    for t in range(len(result.ks_score)):
        row = [t, repr(float(result.ks_score[t])), int(result.ks_flags[t]),
               repr(float(result.nll_score[t]))]
        if result.labels is not None:
            row.append(int(result.labels[t]))
        rows.append(row)
    _write_csv(path, meta, header, rows)


def read_detection(path):
    meta, header, rows = _read_table(path)
    t = _column(header, rows, "t", path, int)
    _check_time(t, path)
    out = {"t": t}
    for name in ("ks_score", "nll_score"):
        out[name] = _column(header, rows, name, path)
    out["ks_flag"] = _column(header, rows, "ks_flag", path, int)
    out["label"] = _parse_labels(header, rows, path)
    return meta, out


def write_latents(path, lat, k, meta):
    D = lat.whitened.shape[1]
    header = (["t"] + [f"z{i}" for i in range(D)] + [f"mu{i}" for i in range(D)]
              + [f"zt{i}" for i in range(D)] + ["logdet"])
    z = lat.z if lat.z is not None else lat.whitened + lat.mu
    rows = []
    for i in range(len(lat.whitened)):
        rows.append([k + i] + [repr(float(a)) for a in z[i]] + [repr(float(a)) for a in lat.mu[i]]
                    + [repr(float(a)) for a in lat.whitened[i]] + [repr(float(lat.logdet[i]))])
    _write_csv(path, meta, header, rows)


def read_latents(path):
    meta, header, rows = _read_table(path)
    cols = [h for h in header if h.startswith("zt")]
    if not cols:
        raise DataError(f"{path}: no whitened latent columns zt0..")
    t = _column(header, rows, "t", path, int)
    return meta, t, np.column_stack([_column(header, rows, c, path) for c in cols])


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _int_meta(meta, key, default):
    try:
        return int(meta[key]) if key in meta else default
    except ValueError:
        raise DataError(f"bad {key} comment value {meta[key]!r}") from None


# --- subcommands ------------------------------------------------------------

def cmd_synth(args):
    cfg = load_run_config(args.config)
    spec = cfg.signal
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    if args.length is not None:
        spec = replace(spec, length=args.length)
    series = generate_base(spec)
    if not args.clean:
        for a in cfg.anomalies:
            series = inject_anomaly(series, spec, a)
    write_series(args.out, series.values, series.labels, {"seed": spec.seed})
    return EXIT_OK


def _apply_train_overrides(cfg, args):
    tc = cfg.train
    if args.epochs is not None:
        tc = replace(tc, epochs=args.epochs)
    if args.seed is not None:
        tc = replace(tc, seed=args.seed)
    return tc


def cmd_train(args):
    cfg = load_run_config(args.config)
    tc = _apply_train_overrides(cfg, args)
    values, _, _ = read_series(args.series)
    progress = None
    if args.verbose:
        progress = lambda e, loss: print(f"epoch {e} loss {loss:.6f}", file=sys.stderr)
    try:
        ckpt = train(tc, values, progress)
    except TrainingDiverged as err:
        save_checkpoint(err.checkpoint, args.out)
        if args.loss_csv:
            write_loss_csv(err.checkpoint, args.loss_csv)
        raise
    save_checkpoint(ckpt, args.out)
    if args.loss_csv:
        write_loss_csv(ckpt, args.loss_csv)
    return EXIT_OK


def _window(args, cfg, n_scored):
    w = args.w if args.w is not None else cfg.detector.w
    if w > n_scored:
        raise DataError(f"window {w} exceeds the {n_scored} scored steps")
    return w


def _check_dim(values, ckpt):
    if prepare_observations(values).shape[1] != ckpt.flow.dim:
        raise DataError(f"series has {values.shape[1]} channels, checkpoint expects {ckpt.flow.dim}")


def fit_report_dict(rep, w, stride, seed):
    return {
        "format_version": FORMAT_VERSION,
        "seed": seed,
        "w": w,
        "stride": stride,
        "alpha": rep.alpha,
        "margin": rep.margin,
        "n_windows": rep.n_windows,
        "n_compliant": rep.n_compliant,
        "fit_fraction": rep.fit_fraction,
        "verdict": "trustworthy" if rep.trustworthy else "untrustworthy",
        "windows": [{"s": r.statistic, "tau": r.critical_value, "compliant": bool(r.compliant)}
                    for r in rep.results],
    }


def cmd_diagnose(args):
    cfg = load_run_config(args.config)
    ckpt = load_checkpoint(args.checkpoint)
    values, _, _ = read_series(args.series)
    k = ckpt.flow.context
    _check_dim(values, ckpt)
    w = _window(args, cfg, len(values) - k)
    stride = args.stride or cfg.detector.fit_stride or w
    alpha = args.alpha if args.alpha is not None else cfg.gof.alpha
    rep = fit_diagnostic(ckpt.flow, ckpt.ldm, values, k, w, stride, alpha, cfg.detector.margin)
    _write_json(args.out, fit_report_dict(rep, w, stride, ckpt.config.seed))
    return EXIT_OK


def cmd_detect(args):
    cfg = load_run_config(args.config)
    ckpt = load_checkpoint(args.checkpoint)
    values, labels, _ = read_series(args.series)
    k = ckpt.flow.context
    _check_dim(values, ckpt)
    w = _window(args, cfg, len(values) - k)
    stride = args.stride or cfg.detector.stride
    alpha = args.alpha if args.alpha is not None else cfg.gof.alpha
    res = detect(ckpt.flow, ckpt.ldm, values, k, w, stride, alpha, labels)
    meta = {"seed": ckpt.config.seed, "context": k, "w": w, "stride": stride, "alpha": alpha,
            "nll_threshold": repr(ckpt.nll_threshold)}
    write_detection(args.out, res, meta)
    if args.latents:
        lat = latent_trajectory(ckpt.flow, ckpt.ldm, values, k)
        write_latents(args.latents, lat, k, {"seed": ckpt.config.seed, "context": k})
    return EXIT_OK


def cmd_eval(args):
    meta, det = read_detection(args.detection)
    if det["label"] is None:
        raise DataError(f"{args.detection}: eval needs a label column")
    k = _int_meta(meta, "context", 0)
    w = _int_meta(meta, "w", None)
    valid = det["t"] >= k
    rows = []
    for source, buf_default in (("ks", w // 2 if w else 4), ("nll", 4)):
        buf = args.max_buffer if args.max_buffer is not None else buf_default
        try:
            rep = evaluate(det[f"{source}_score"], det["label"], valid, buf)
        except ValueError as err:
            raise DataError(f"{args.detection}: {err}") from err
        rows.append((args.dataset, source, w if source == "ks" else "", rep))
    write_reports(rows, args.out)
    return EXIT_OK


def _grid_trial(item):
    idx, tc, values, w, stride, alpha, margin = item
    out = {"trial": idx, "regime": tc.regime, **asdict(tc)}
    try:
        ckpt = train(tc, values)
    except TrainingDiverged as err:
        out.update(status="diverged", final_loss=math.nan, fit_fraction=math.nan, verdict="",
                   error=str(err))
        return out
    k = tc.context
    if w > len(values) - k:
        rep = None
    else:
        rep = fit_diagnostic(ckpt.flow, ckpt.ldm, values, k, w, stride, alpha, margin)
    out.update(
        status="ok",
        final_loss=ckpt.final_loss,
        fit_fraction=rep.fit_fraction if rep else math.nan,
        verdict=("trustworthy" if rep.trustworthy else "untrustworthy") if rep else "",
        error="" if rep else "window longer than scored series",
    )
    return out


def _rank_key(row):
    fit = row["fit_fraction"]
    loss = row["final_loss"]
    return (row["status"] != "ok", -(fit if fit == fit else -1.0),
            loss if loss == loss else math.inf, row["trial"])


def cmd_grid(args):
    cfg = load_run_config(args.config)
    values, _, _ = read_series(args.series)
    base = _apply_train_overrides(cfg, args)
    configs = grid_configs(base, cfg.grid)
    w = args.w if args.w is not None else cfg.detector.w
    stride = cfg.detector.fit_stride or w
    items = [(i, tc, values, w, stride, cfg.gof.alpha, cfg.detector.margin)
             for i, tc in enumerate(configs)]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_grid_trial, items))
    else:
        results = [_grid_trial(it) for it in items]
    results.sort(key=_rank_key)
    names = [f.name for f in fields(TrainConfig)]
    header = ["rank", "trial", "status", "final_loss", "fit_fraction", "verdict", "regime"] + names + ["error"]
    rows = []
    for rank, r in enumerate(results, 1):
        rows.append([rank, r["trial"], r["status"], repr(r["final_loss"]), repr(r["fit_fraction"]),
                     r["verdict"], r["regime"]] + [r[n] for n in names] + [r["error"]])
    _write_csv(args.out, {"seed": cfg.seed, "w": w, "stride": stride, "alpha": cfg.gof.alpha},
               header, rows)
    if all(r["status"] != "ok" for r in results):
        print("every grid trial diverged", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_plotdata(args):
    meta, det = read_detection(args.detection)
    seed = meta.get("seed", "")
    long_rows = []
    for i, t in enumerate(det["t"]):
        long_rows.append([t, "ks_score", repr(float(det["ks_score"][i]))])
        long_rows.append([t, "ks_flag", int(det["ks_flag"][i])])
        long_rows.append([t, "nll_score", repr(float(det["nll_score"][i]))])
        if det["label"] is not None:
            long_rows.append([t, "label", int(det["label"][i])])
    scatter_rows = []
    if args.latents:
        _, lt, zt = read_latents(args.latents)
        D = zt.shape[1]
        for i, t in enumerate(lt):
            for c in range(D):
                long_rows.append([t, f"zt{c}", repr(float(zt[i, c]))])
        lab = {}
        if det["label"] is not None:
            lab = dict(zip(det["t"].tolist(), det["label"].tolist()))
        for a in range(D):
            for b in range(a + 1, D):
                for i, t in enumerate(lt):
                    scatter_rows.append([t, a, b, repr(float(zt[i, a])), repr(float(zt[i, b])),
                                         lab.get(int(t), "")])
    long_rows.sort(key=lambda r: r[0])
    _write_csv(args.out_long, {"seed": seed}, ["t", "channel", "value"], long_rows)
    if args.out_scatter:
        if not args.latents:
            raise UsageError("--out-scatter needs --latents")
        _write_csv(args.out_scatter, {"seed": seed}, ["t", "dim_a", "dim_b", "za", "zb", "label"],
                   scatter_rows)
    return EXIT_OK


# --- argument parsing -------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    p = _Parser(prog="lgflow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"lgflow {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a labelled sinusoid SeriesFile")
    s.add_argument("--config", help="RunConfig JSON (signal and anomalies sections)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--length", type=int)
    s.add_argument("--clean", action="store_true", help="skip anomaly injection")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="fit flow and latent dynamics to a SeriesFile")
    s.add_argument("series")
    s.add_argument("--config")
    s.add_argument("--out", required=True, help="checkpoint JSON")
    s.add_argument("--loss-csv")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("diagnose", help="FIT compliance of a checkpoint on its training series")
    s.add_argument("checkpoint")
    s.add_argument("series")
    s.add_argument("--config")
    s.add_argument("--out", required=True, help="FitReport JSON")
    s.add_argument("--w", type=int)
    s.add_argument("--stride", type=int)
    s.add_argument("--alpha", type=float)
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("detect", help="per-timestep KS and NLL scores")
    s.add_argument("checkpoint")
    s.add_argument("series")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--latents", help="also write the latent trajectory CSV")
    s.add_argument("--w", type=int)
    s.add_argument("--stride", type=int)
    s.add_argument("--alpha", type=float)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("eval", help="AUC, VUS and F1 of a labelled detection CSV")
    s.add_argument("detection")
    s.add_argument("--out", required=True)
    s.add_argument("--max-buffer", type=int, help="default: w//2 for KS, 4 for NLL")
    s.add_argument("--dataset", default="series")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("grid", help="train every grid combination and rank them")
    s.add_argument("series")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--w", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_grid)

    s = sub.add_parser("plotdata", help="long-format and latent scatter CSVs for plotting")
    s.add_argument("detection")
    s.add_argument("--latents")
    s.add_argument("--out-long", required=True)
    s.add_argument("--out-scatter")
    s.set_defaults(func=cmd_plotdata)
    return p


def run_command(argv):
    try:
        args = build_parser().parse_args(argv)
        for name in ("w", "stride", "epochs", "length", "jobs"):
            v = getattr(args, name, None)
            if v is not None and v < (0 if name == "epochs" else 1):
                raise UsageError(f"--{name} out of range: {v}")
        if getattr(args, "max_buffer", None) is not None and args.max_buffer < 0:
            raise UsageError("--max-buffer must be >= 0")
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError, KeyError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA


def main(argv=None):
    return run_command(sys.argv[1:] if argv is None else argv)
