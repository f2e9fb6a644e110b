"""Command-line entry point: ``copi {train,eval,compress,features,decorr-lab}``.

Settings come from built-in defaults, then an optional ``--config`` file
(INI-style ``key = value`` lines under a ``[train]``, ``[eval]``, ... or
``[common]`` section), then command-line flags; later sources win.  The
effective settings are written as ``#`` comment lines at the top of every
CSV the command produces.

Exit status: 0 success, 2 bad configuration, 3 missing data, 4 corrupt
checkpoint, 5 training diverged.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from copi import analysis, checkpoint
from copi.data import Dataset, load_named
from copi.decorr_lab import LabConfig, run_lab
from copi.errors import ConfigError, ContractError, DivergenceError, FormatError
from copi.network import Network, build_network
from copi.tensor import make_rng
from copi.trainer import TrainConfig, TrainMetrics, evaluate, train

log = logging.getLogger("copi")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT, EXIT_DIVERGED = 0, 2, 3, 4, 5

# defaults for every setting a config file may name; None means "rule-dependent"
DEFAULTS = {
    "dataset": "mnist",
    "data_dir": "data/mnist",
    "out_dir": "runs",
    "rule": "copi",
    "signal": "bp",
    "loss": "quadratic",
    "dims": "784,500,500,500,500,500,500,10",
    "eta_w": 1e-4,
    "eta_r": 1e-4,
    "alpha": None,
    "slope": 0.1,
    "batch": 50,
    "epochs": 20,
    "warmup": None,
    "decorr": None,
    "seeds": 1,
    "seed": 0,
    "subset": 0,
    "checkpoint": None,
    "keep_layers": None,
    "layers": "2,4,6,7",
    "units": 100,
    "dim": 100,
    "n_samples": 1000,
    "noise": 0.1,
    "scales": "0.1,1,10",
    "eta": 1e-3,
}
SIGNAL_NAMES = {"bp": "backprop", "backprop": "backprop", "fa": "feedback-alignment",
                "feedback-alignment": "feedback-alignment"}


def derive_seed(seed: int, run: int) -> int:
    """Child seed for run ``run`` of a multi-seed experiment."""
    return int(np.random.SeedSequence(seed, spawn_key=(run,)).generate_state(1, np.uint64)[0])


def parse_int_list(text: str) -> list[int]:
    return [int(t) for t in str(text).replace(" ", "").split(",") if t]


def parse_float_list(text: str) -> list[float]:
    return [float(t) for t in str(text).replace(" ", "").split(",") if t]


def read_config_file(path, section: str) -> dict[str, str]:
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigError(f"cannot read config file {path}")
    values = {}
    for sec in ("common", section):
        if parser.has_section(sec):
            for k, v in parser.items(sec):
                values[k.replace("-", "_")] = v
    unknown = set(values) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys in {path}: {sorted(unknown)}")
    return values


def resolve(args: argparse.Namespace, section: str) -> dict:
    """Merge defaults < config file < flags into one settings dict."""
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        settings.update(read_config_file(args.config, section))
    for k, v in vars(args).items():
        if k in DEFAULTS and v is not None:
            settings[k] = v
    return settings


def settings_header(command: str, settings: dict, keys) -> str:
    lines = [f"copi {command}"] + [f"{k} = {settings[k]}" for k in keys]
    return "\n".join(lines)


def _opt_float(v):
    return None if v in (None, "", "None") else float(v)


def _opt_int(v):
    return None if v in (None, "", "None") else int(v)


def _load_split(settings: dict, split: str) -> Dataset:
    ds = load_named(settings["dataset"], settings["data_dir"], split)
    subset = int(settings["subset"] or 0)
    if split == "train" and subset > 0:
        ds = ds.subset(subset)
    return ds


TRAIN_KEYS = ["dataset", "data_dir", "out_dir", "rule", "signal", "loss", "dims", "eta_w", "eta_r", "alpha",
              "slope", "batch", "epochs", "warmup", "decorr", "seeds", "seed", "subset"]


def make_train_config(settings: dict, seed: int) -> TrainConfig:
    signal = SIGNAL_NAMES.get(str(settings["signal"]))
    if signal is None:
        raise ConfigError(f"unknown signal {settings['signal']!r}; use bp or fa")
    return TrainConfig(eta_w=float(settings["eta_w"]), eta_r=float(settings["eta_r"]),
                       alpha=_opt_float(settings["alpha"]), batch_size=int(settings["batch"]),
                       epochs=int(settings["epochs"]), warmup_epochs=_opt_int(settings["warmup"]),
                       rule=str(settings["rule"]), signal=signal, loss=str(settings["loss"]),
                       decorr=settings["decorr"] or None, seed=seed)


def cmd_train(args) -> int:
    s = resolve(args, "train")
    dims = parse_int_list(s["dims"])
    n_seeds = int(s["seeds"])
    configs = [make_train_config(s, derive_seed(int(s["seed"]), run)) for run in range(n_seeds)]
    train_set = _load_split(s, "train")
    test_set = _load_split(s, "test")
    if dims[0] != train_set.dim:
        raise ConfigError(f"--dims starts with {dims[0]} but {s['dataset']} has {train_set.dim} features")
    out = Path(s["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    header = settings_header("train", s, TRAIN_KEYS)
    summary = []
    for run, cfg in enumerate(configs):
        net = build_network(make_rng(cfg.seed, 0), dims, slope=float(s["slope"]),
                            fa=cfg.signal == "feedback-alignment")

        def report(rec, run=run):
            print(f"seed {run} epoch {rec.epoch}: train_acc {rec.train_acc:.4f} test_acc {rec.test_acc:.4f} "
                  f"test_loss {rec.test_loss:.4f} ({rec.seconds:.0f}s)", flush=True)

        net, metrics = train(net, train_set, test_set, cfg, on_epoch=report)
        checkpoint.save_network(net, out / f"checkpoint_seed{run}.copi")
        metrics.write_csv(out / f"metrics_seed{run}.csv", header + f"\nrun = {run}\nrun_seed = {cfg.seed}")
        summary.append(metrics)
    write_summary(out / "summary.csv", summary, header)
    return EXIT_OK


def write_summary(path, runs: list[TrainMetrics], header: str) -> None:
    """Mean and standard deviation over runs of peak accuracy and epochs-to-99%-of-peak."""
    with open(path, "w", newline="") as fh:
        for line in header.splitlines():
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["metric", "mean", "std", "n_runs"])
        for name in ("train_acc", "test_acc"):
            peaks = np.array([m.peak(name) for m in runs if m.rows])
            e99 = np.array([m.epochs_to_fraction_of_peak(0.99, name) for m in runs if m.rows], dtype=float)
            for label, vals in ((f"peak_{name}", peaks), (f"epochs_to_99pct_{name}", e99)):
                if vals.size:
                    w.writerow([label, float(vals.mean()), float(vals.std()), int(vals.size)])
                else:
                    w.writerow([label, "nan", "nan", 0])


def _load_model(path):
    if path is None:
        raise ConfigError("--checkpoint is required")
    if not Path(path).exists():
        raise FileNotFoundError(f"missing checkpoint: {path}")
    return checkpoint.load_checkpoint(path)


def cmd_eval(args) -> int:
    s = resolve(args, "eval")
    model = _load_model(s["checkpoint"])
    test_set = _load_split(s, "test")
    if isinstance(model, Network):
        acc, loss = evaluate(model, test_set, str(s["loss"]))
        print(f"test_acc {acc:.4f} test_loss {loss:.6f}")
    else:
        print(f"test_acc {model.accuracy(test_set):.4f}")
    return EXIT_OK


def cmd_compress(args) -> int:
    s = resolve(args, "compress")
    net = _load_model(s["checkpoint"])
    if not isinstance(net, Network):
        raise ConfigError("compress needs a full network checkpoint")
    train_set, test_set = _load_split(s, "train"), _load_split(s, "test")
    keeps = parse_int_list(s["keep_layers"]) if s["keep_layers"] else list(range(net.depth, -1, -1))
    out = Path(s["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in keeps:
        t0 = time.perf_counter()
        cn = analysis.compress(net, train_set, k)
        fit = time.perf_counter() - t0
        acc = cn.accuracy(test_set)
        checkpoint.save_compressed(cn, out / f"compressed_keep{k}.copi")
        rows.append((k, acc, fit))
        print(f"keep_layers {k}: test_acc {acc:.4f} (fit {fit:.1f}s)", flush=True)
    with open(out / "compression.csv", "w", newline="") as fh:
        for line in settings_header("compress", s, ["checkpoint", "dataset", "data_dir", "subset"]).splitlines():
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["keep_layers", "test_acc", "fit_seconds"])
        w.writerows(rows)
    return EXIT_OK


def cmd_features(args) -> int:
    s = resolve(args, "features")
    net = _load_model(s["checkpoint"])
    if not isinstance(net, Network):
        raise ConfigError("features needs a full network checkpoint")
    train_set = _load_split(s, "train")
    layers = parse_int_list(s["layers"])
    units = int(s["units"])
    out = Path(s["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    maps = analysis.feature_maps(net, train_set, layers)
    rng = make_rng(int(s["seed"]), 1)
    for l, B in maps.items():
        pick = np.sort(rng.choice(B.shape[0], size=min(units, B.shape[0]), replace=False))
        analysis.write_pgm(out / f"features_layer{l}.pgm", analysis.tile_grid(B[pick]))
        print(f"layer {l}: wrote {len(pick)} feature maps")
    sample = train_set.features[:, :min(units, train_set.n)]
    analysis.write_pgm(out / "inputs.pgm", analysis.tile_grid(sample.T))
    analysis.write_pgm(out / "decorrelated_inputs.pgm",
                       analysis.tile_grid(analysis.decorrelated_inputs(net, sample).T))
    return EXIT_OK


def cmd_decorr_lab(args) -> int:
    s = resolve(args, "decorr-lab")
    cfg = LabConfig(dim=int(s["dim"]), n_samples=int(s["n_samples"]), r_init_noise=float(s["noise"]),
                    scales=parse_float_list(s["scales"]), eta=float(s["eta"]), seed=int(s["seed"]))
    result = run_lab(cfg)
    out = Path(s["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    result.write_csv(out / "decorr_lab.csv",
                     settings_header("decorr-lab", s, ["dim", "n_samples", "noise", "scales", "eta", "seed"]))
    for cell in result.cells:
        flag = "  (diverged)" if cell.diverged else ""
        print(f"{cell.rule:>13s} c={cell.c:<6g} reduction {cell.reduction:.6g}{flag}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="copi", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="INI-style settings file; flags override it")
        sp.add_argument("--out-dir", dest="out_dir")
        sp.add_argument("--seed", type=int)
        if data:
            sp.add_argument("--dataset", choices=["mnist", "cifar10"])
            sp.add_argument("--data-dir", dest="data_dir")
            sp.add_argument("--subset", type=int, help="use only the first N training samples")

    t = sub.add_parser("train", help="train networks and write checkpoints and metrics")
    common(t)
    t.add_argument("--rule", choices=["copi", "bio-copi", "bp-decorr", "bp-adam"])
    t.add_argument("--signal", choices=["bp", "fa"])
    t.add_argument("--loss", choices=["quadratic", "cross-entropy"])
    t.add_argument("--dims", help="comma-separated layer sizes, input first")
    t.add_argument("--eta-w", dest="eta_w", type=float)
    t.add_argument("--eta-r", dest="eta_r", type=float)
    t.add_argument("--alpha", type=float, help="gain (default 1000, or 1 for bp-adam)")
    t.add_argument("--slope", type=float, help="leaky-relu negative slope")
    t.add_argument("--batch", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--warmup", type=int, help="decorrelation-only epochs before training")
    t.add_argument("--decorr", choices=["copi", "bio"], help="override the lateral-weight rule")
    t.add_argument("--seeds", type=int, help="number of independently seeded runs")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="report test accuracy of a checkpoint")
    common(e)
    e.add_argument("--checkpoint")
    e.add_argument("--loss", choices=["quadratic", "cross-entropy"])
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compress", help="replace trailing layers by fitted linear readouts")
    common(c)
    c.add_argument("--checkpoint")
    c.add_argument("--keep-layers", dest="keep_layers", help="comma-separated counts (default: all)")
    c.set_defaults(func=cmd_compress)

    f = sub.add_parser("features", help="write per-layer feature-map grids as PGM")
    common(f)
    f.add_argument("--checkpoint")
    f.add_argument("--layers", help="comma-separated 1-based layer indices")
    f.add_argument("--units", type=int, help="units per layer to draw")
    f.set_defaults(func=cmd_features)

    d = sub.add_parser("decorr-lab", help="compare decorrelation rules under rescaling")
    common(d, data=False)
    d.add_argument("--dim", type=int)
    d.add_argument("--n-samples", dest="n_samples", type=int)
    d.add_argument("--noise", type=float, help="half-width of the uniform noise added to R = I")
    d.add_argument("--scales", help="comma-separated c values")
    d.add_argument("--eta", type=float)
    d.set_defaults(func=cmd_decorr_lab)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
