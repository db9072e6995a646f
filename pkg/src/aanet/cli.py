"""Command-line entry point: ``aanet {gen,dataset,train,eval,pareto}``.

Options come from (lowest to highest precedence) built-in defaults, a
``--config`` file, and command-line flags. The config file is either plain
``key = value`` lines (``#`` starts a comment; keys use the long flag name
with dashes or underscores) or a run manifest JSON written by a previous run.

Randomness: every command has one ``--seed``. Independent streams are derived
as ``SeedSequence([seed, crc32(name)])`` for a stream name such as
``"synth"``, ``"shift/3"``, ``"train"`` or ``"queue"``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal
invariant violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import zlib
from pathlib import Path

log = logging.getLogger("aanet")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


def stream_seed(seed: int, name: str) -> int:
    import numpy as np

    return int(np.random.SeedSequence([seed, zlib.crc32(name.encode())]).generate_state(1)[0])


def _pair(text: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}") from None
    return a, b


def _station(text: str) -> tuple[str, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected 'id,lat,lon', got {text!r}")
    return parts[0], float(parts[1]), float(parts[2])


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aanet", description="Routing laboratory for aeronautical ad-hoc networks.")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="key=value file or manifest JSON")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out-dir", type=Path)

    g = sub.add_parser("gen", help="synthesize a scenario and time-shifted copies")
    common(g)
    g.add_argument("--n-flights", type=int)
    g.add_argument("--duration-s", type=float)
    g.add_argument("--lat-range", type=_pair)
    g.add_argument("--lon-range", type=_pair)
    g.add_argument("--alt-range-km", type=_pair)
    g.add_argument("--speed-range-mps", type=_pair)
    g.add_argument("--staggered", type=_bool)
    g.add_argument("--corridor", type=_bool)
    g.add_argument("--station", type=_station, action="append", help="id,lat,lon (repeatable)")
    g.add_argument("--copies", type=int, help="number of time-shifted copies")
    g.add_argument("--shift-sigma-s", type=float)

    d = sub.add_parser("dataset", help="generate SO or MO training samples")
    common(d)
    d.add_argument("--scenario", type=Path, action="append", help="flight file (repeatable, one group each)")
    d.add_argument("--stations", type=Path)
    d.add_argument("--kind", choices=("SO", "MO"))
    d.add_argument("--K", type=int)
    d.add_argument("--dest")
    d.add_argument("--t-start", type=float)
    d.add_argument("--t-stop", type=float)
    d.add_argument("--t-step", type=float)
    d.add_argument("--eps-c", type=float, nargs=3, metavar=("C0", "DC", "B"))
    d.add_argument("--eps-l", type=float, nargs=3, metavar=("L0", "DL", "A"))
    d.add_argument("--split", type=float, nargs=3, metavar=("TRAIN", "VAL", "TEST"))

    t = sub.add_parser("train", help="train an estimator on a dataset file")
    common(t)
    t.add_argument("--dataset", type=Path)
    t.add_argument("--iters", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--lr", type=float)

    e = sub.add_parser("eval", help="replay policies over a scenario")
    common(e)
    e.add_argument("--scenario", type=Path)
    e.add_argument("--stations", type=Path)
    e.add_argument("--model", type=Path)
    e.add_argument("--policies")
    e.add_argument("--dest")
    e.add_argument("--K", type=int)
    e.add_argument("--t-start", type=float)
    e.add_argument("--t-stop", type=float)
    e.add_argument("--t-step", type=float)
    e.add_argument("--with-lifetime", type=_bool)

    r = sub.add_parser("pareto", help="POMOR front and DL sweep for one source/destination pair")
    common(r)
    r.add_argument("--scenario", type=Path)
    r.add_argument("--stations", type=Path)
    r.add_argument("--ts", type=float)
    r.add_argument("--src")
    r.add_argument("--dest")
    r.add_argument("--model", type=Path, help="MO model; omit to use the oracle stub")
    r.add_argument("--lam", type=float)
    r.add_argument("--K", type=int)
    r.add_argument("--eps-c", type=float, nargs=3, metavar=("C0", "DC", "B"))
    r.add_argument("--eps-l", type=float, nargs=3, metavar=("L0", "DL", "A"))
    return p


DEFAULTS = {
    "gen": {
        "seed": 0, "out_dir": "out", "n_flights": 50, "duration_s": 3600.0,
        "lat_range": (45.0, 60.0), "lon_range": (-40.0, -10.0), "alt_range_km": (9.0, 12.0),
        "speed_range_mps": (220.0, 260.0), "staggered": False, "corridor": False,
        "station": [("GS", 52.0, -10.5)], "copies": 0, "shift_sigma_s": 1800.0,
    },
    "dataset": {
        "seed": 0, "out_dir": "out", "scenario": None, "stations": None, "kind": "SO", "K": None,
        "dest": "GS", "t_start": None, "t_stop": None, "t_step": 60.0,
        "eps_c": (20.0, 2.0, 15), "eps_l": (0.0, 5.0, 6), "split": (1.0, 0.0, 0.0),
    },
    "train": {"seed": 0, "out_dir": "out", "dataset": None, "iters": None, "batch": 1000, "lr": 1e-3},
    "eval": {
        "seed": 0, "out_dir": "out", "scenario": None, "stations": None, "model": None,
        "policies": "optimal,greedy,glsr,dl-nofb,dl-fb", "dest": "GS", "K": None,
        "t_start": None, "t_stop": None, "t_step": 600.0, "with_lifetime": False,
    },
    "pareto": {
        "seed": 0, "out_dir": "out", "scenario": None, "stations": None, "ts": None, "src": None,
        "dest": "GS", "model": None, "lam": 10.0, "K": 40,
        "eps_c": (20.0, 2.0, 15), "eps_l": (0.0, 5.0, 6),
    },
}

def read_config(path: Path, command: str) -> dict:
    """Values from a key=value file or a manifest JSON, keyed like argparse dests."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if path.suffix == ".json":
        try:
            man = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: bad manifest JSON ({exc})") from None
        if man.get("command") != command:
            raise ConfigError(f"{path}: manifest is for {man.get('command')!r}, not {command!r}")
        return dict(man["config"])
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices[command]
    actions = {a.dest: a for a in sub._actions}
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        dest = key.replace("-", "_")
        act = actions.get(dest)
        if act is None or dest in ("config", "help"):
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r} for {command}")
        try:
            if act.nargs is not None and act.nargs not in ("?",) and isinstance(act.nargs, int):
                v = tuple(act.type(tok) for tok in value.replace(",", " ").split())
                if len(v) != act.nargs:
                    raise ValueError(f"expected {act.nargs} values")
            else:
                v = act.type(value) if act.type else value
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
        if isinstance(act, argparse._AppendAction):
            out.setdefault(dest, []).append(v)
        else:
            out[dest] = v
    return out


def resolve(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[args.command])
    if args.config is not None:
        cfg.update(read_config(args.config, args.command))
    for k, v in vars(args).items():
        if k in ("command", "config", "threads", "verbose") or v is None:
            continue
        cfg[k] = v
    return cfg


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def write_manifest(out_dir: Path, command: str, cfg: dict, outputs: list) -> Path:
    import numpy as np

    from . import __version__

    man = {
        "command": command,
        "config": {k: _jsonable(v) for k, v in sorted(cfg.items())},
        "seed": cfg.get("seed"),
        "versions": {"aanet": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "outputs": [str(Path(o).name) for o in outputs],
    }
    path = out_dir / f"manifest_{command}.json"
    path.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _need(cfg, *keys):
    for k in keys:
        if cfg.get(k) in (None, [], ""):
            raise ConfigError(f"missing required option --{k.replace('_', '-')}")


def _load(cfg, path_key="scenario"):
    from .flightdata import load_scenario

    p = cfg[path_key]
    p = p[0] if isinstance(p, list) else p
    return load_scenario(Path(p), Path(cfg["stations"]) if cfg.get("stations") else None)


def _times(cfg, scenario):
    from .flightdata import snapshot_times

    lo, hi = scenario.time_span()
    start = cfg["t_start"] if cfg.get("t_start") is not None else lo
    stop = cfg["t_stop"] if cfg.get("t_stop") is not None else hi
    if cfg["t_step"] <= 0 or stop < start:
        raise ConfigError("bad time range")
    return snapshot_times(scenario, float(start), float(stop), float(cfg["t_step"]))


def _grid(cfg):
    from .datasetgen import EpsGrid

    c0, dc, B = cfg["eps_c"]
    l0, dl, A = cfg["eps_l"]
    if int(B) != B or int(A) != A:
        raise ConfigError("grid counts must be integers")
    try:
        return EpsGrid(float(c0), float(dc), int(B), float(l0), float(dl), int(A))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# --------------------------------------------------------------------------
# commands


def cmd_gen(cfg: dict) -> list:
    from .flightdata import SynthConfig, save_scenario, synth_scenario, time_shift_augment

    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    try:
        sc = SynthConfig(
            lat_range=tuple(cfg["lat_range"]), lon_range=tuple(cfg["lon_range"]), n_flights=int(cfg["n_flights"]),
            duration_s=float(cfg["duration_s"]), alt_range_km=tuple(cfg["alt_range_km"]),
            speed_range_mps=tuple(cfg["speed_range_mps"]), staggered=bool(cfg["staggered"]),
            corridor=bool(cfg["corridor"]), ground_stations=tuple(tuple(s) for s in cfg["station"]),
        )
        sc.validate()
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    if cfg["copies"] < 0 or cfg["shift_sigma_s"] < 0:
        raise ConfigError("copies and shift-sigma-s must be nonnegative")
    seed = int(cfg["seed"])
    base = synth_scenario(sc, stream_seed(seed, "synth"))
    stations = out / "stations.csv"
    outputs = [out / "scenario_base.csv", stations]
    save_scenario(base, outputs[0], stations)
    for k in range(int(cfg["copies"])):
        s = time_shift_augment(base, float(cfg["shift_sigma_s"]), stream_seed(seed, f"shift/{k}"))
        p = out / f"scenario_shift{k}.csv"
        save_scenario(s, p)
        outputs.append(p)
    return outputs


def cmd_dataset(cfg: dict) -> list:
    from .datasetgen import concat, gen_mo_samples, gen_so_samples, save_dataset, split_counts, split_dataset

    _need(cfg, "scenario")
    kind = cfg["kind"]
    K = int(cfg["K"] or (10 if kind == "SO" else 40))
    if K <= 0:
        raise ConfigError("K must be positive")
    split_counts(len(cfg["scenario"]), cfg["split"])  # fail early on impossible splits
    parts = []
    for k, path in enumerate(cfg["scenario"]):
        sc = _load({"scenario": path, "stations": cfg.get("stations")})
        if cfg["dest"] not in sc.stations:
            raise ConfigError(f"destination {cfg['dest']!r} is not a ground station of {path}")
        ts = _times(cfg, sc)
        if kind == "SO":
            parts.append(gen_so_samples(sc, ts, cfg["dest"], K, group=k))
        else:
            parts.append(gen_mo_samples(sc, ts, cfg["dest"], K, _grid(cfg), group=k))
    ds = concat(parts)
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    names = ("train", "val", "test")
    for name, part in zip(names, split_dataset(ds, cfg["split"], stream_seed(int(cfg["seed"]), "split"))):
        if len(part) == 0 and name != "train":
            continue
        p = out / f"dataset_{kind.lower()}_{name}.bin"
        save_dataset(part, p)
        outputs.append(p)
    return outputs


def cmd_train(cfg: dict) -> list:
    import csv

    from .datasetgen import load_dataset
    from .neural import save_model
    from .router import fit_net_model

    _need(cfg, "dataset")
    ds = load_dataset(Path(cfg["dataset"]))
    if len(ds) == 0:
        raise ConfigError("dataset is empty")
    model, res = fit_net_model(
        ds, iters=cfg["iters"], seed=stream_seed(int(cfg["seed"]), "train"), batch=int(cfg["batch"]), lr=float(cfg["lr"])
    )
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    mp = out / f"model_{ds.kind.lower()}.bin"
    save_model(
        model.params, mp,
        {"K": ds.K, "kind": ds.kind, "y_offset": model.y_offset.tolist(), "y_scale": model.y_scale.tolist()},
    )
    lp = out / f"loss_{ds.kind.lower()}.csv"
    with open(lp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "loss"])
        for i, l in enumerate(res.losses, 1):
            w.writerow([i, f"{l:.9g}"])
    return [mp, lp]


def cmd_eval(cfg: dict) -> list:
    from .router import NetModel
    from .simulator import Policy, eval_policies, write_cdf_csv, write_eval_csv

    _need(cfg, "scenario")
    sc = _load(cfg)
    names = [n.strip() for n in cfg["policies"].split(",") if n.strip()]
    model = None
    if any(n.startswith("dl") for n in names):
        _need(cfg, "model")
        model = NetModel.from_file(Path(cfg["model"]))
        if model.kind != "SO":
            raise ConfigError("eval expects a single-objective model")
    K = int(cfg["K"] or (model.K if model else 10))
    if model is not None and model.K != K:
        raise ConfigError(f"model was trained with K={model.K}, --K is {K}")
    try:
        policies = [Policy(n, model if n.startswith("dl") else None) for n in names]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg["dest"] not in sc.stations:
        raise ConfigError(f"destination {cfg['dest']!r} is not a ground station")
    reports = eval_policies(
        sc, _times(cfg, sc), cfg["dest"], policies, seed=stream_seed(int(cfg["seed"]), "queue"), K=K,
        with_lifetime=bool(cfg["with_lifetime"]),
    )
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    ep = out / "eval.csv"
    write_eval_csv(reports.values(), ep)
    outputs = [ep]
    for name, rep in reports.items():
        p = out / f"cdf_{name}.csv"
        write_cdf_csv(rep, p)
        outputs.append(p)
        log.info("%-8s delivered %.3f  success %.3f  mean %.2f ms", name, rep.delivery_ratio(),
                 rep.success_probability(), rep.mean_delay_s() * 1e3)
    return outputs


def cmd_pareto(cfg: dict) -> list:
    from .netgraph import path_metrics
    from .pareto import ObjectiveVector, pomor, write_pareto_csv
    from .router import NetModel, OracleModel
    from .simulator import mo_sweep_graph

    _need(cfg, "scenario", "ts", "src")
    sc = _load(cfg)
    K = int(cfg["K"])
    model = None
    if cfg.get("model"):
        model = NetModel.from_file(Path(cfg["model"]))
        if model.kind != "MO":
            raise ConfigError("pareto expects a multi-objective model")
        if model.K != K:
            raise ConfigError(f"model was trained with K={model.K}, --K is {K}")

    import numpy as np

    from .flightdata import snapshot
    from .linkmodel import QueueModel, RadioParams
    from .netgraph import build_graph

    snap = snapshot(sc, float(cfg["ts"]))
    for nid in (cfg["src"], cfg["dest"]):
        if nid not in snap.index:
            raise ConfigError(f"node {nid!r} is not present at ts={cfg['ts']}")
    g = build_graph(
        snap, QueueModel.testing(), RadioParams.preset(), scenario=sc,
        rng=np.random.default_rng(stream_seed(int(cfg["seed"]), "queue")),
    )
    src, dst = g.index(cfg["src"]), g.index(cfg["dest"])
    est = model if model is not None else OracleModel(g, dst, K)
    sweep = mo_sweep_graph(g, src, dst, est, _grid(cfg), float(cfg["lam"]), K)
    front = pomor(g, src, dst)
    if not front.solutions:
        log.warning("%s cannot reach %s at ts=%s; outputs are empty", cfg["src"], cfg["dest"], cfg["ts"])
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    fp, sp = out / "pareto_pomor.csv", out / "pareto_sweep.csv"
    write_pareto_csv(front, fp, g.ids)
    write_pareto_csv([(s.outcome.path, ObjectiveVector.of(path_metrics(g, s.outcome.path))) for s in sweep], sp, g.ids)
    return [fp, sp]


COMMANDS = {"gen": cmd_gen, "dataset": cmd_dataset, "train": cmd_train, "eval": cmd_eval, "pareto": cmd_pareto}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    from .datasetgen import DatasetError
    from .flightdata import ScenarioError
    from .netgraph import GraphError, InternalInconsistencyError
    from .neural import ModelFileError
    from .router import ModelMismatchError

    try:
        cfg = resolve(args)
        outputs = COMMANDS[args.command](cfg)
        write_manifest(Path(cfg["out_dir"]), args.command, cfg, outputs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ScenarioError, DatasetError, ModelFileError, ModelMismatchError, GraphError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InternalInconsistencyError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
