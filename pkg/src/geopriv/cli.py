"""Command line: raw bundle (real or synthetic) to utility and privacy reports.

Every command reads its inputs from, and writes its outputs under, one working
directory (``--out``). ``manifest.json`` there lists every artifact with its
checksum, the command that produced it and the hash of the configuration used.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import json
import logging
import os
import sys
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from . import analysis, dataset, evaluation, features, geo, learners, privacy, resampling, semantic

logger = logging.getLogger("geopriv")

MANIFEST = "manifest.json"
INDEX_FILE = "map.idx"
DATASET_CSV = "dataset.csv"
DATASET_JSONL = "dataset.jsonl"


class CliError(Exception):
    """A user-facing failure; printed without a traceback."""


def _split_list(v) -> list[str]:
    if isinstance(v, (list, tuple)):
        return [str(x) for x in v]
    return [x.strip() for x in str(v).split(",") if x.strip()]


@dataclass
class RunConfig:
    seed: int = 7
    out: str = "run"
    # inputs: a bundle directory, otherwise a synthetic cohort is generated
    bundle: Optional[str] = None
    osm: Optional[str] = None
    index: Optional[str] = None
    category_map: str = "human"
    # cohort
    users: int = 30
    weeks: int = 9
    # extraction
    radius_m: float = geo.DEFAULT_RADIUS_M
    gap_cap_s: float = semantic.DEFAULT_GAP_CAP_S
    cell_deg: float = 0.01
    daytime: tuple = features.DAYTIME
    origin_week: Optional[int] = None
    # utility
    split_sets: list = field(default_factory=lambda: ["AF", "PA", "LF", "AO", "LFAO"])
    cv_sets: list = field(default_factory=lambda: ["AF", "PA"])
    models: list = field(default_factory=lambda: ["rf", "gbt"])
    regimes: list = field(default_factory=lambda: ["split", "kfold", "loso"])
    k: int = 10
    min_days: int = 10
    balance_split: str = "smoteenn"
    balance_kfold: str = "smoteenn"
    balance_loso: str = "smote"
    # privacy
    attack_sets: list = field(default_factory=lambda: ["RAW", "AF", "PA"])
    scenarios: list = field(default_factory=lambda: ["rich", "moderate", "limited"])
    mi_bins: int = 10

    def balance_for(self, regime: str) -> str:
        return getattr(self, f"balance_{regime}")

    def config_hash(self) -> str:
        """Hash of the analysis choices; the output location is not part of it."""
        d = asdict(self)
        out = os.path.abspath(d.pop("out"))
        for key in ("bundle", "osm", "index"):
            p = d[key]
            if p is not None and os.path.abspath(p).startswith(out + os.sep):
                d[key] = os.path.relpath(os.path.abspath(p), out)
        blob = json.dumps(d, sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def validate(self) -> None:
        for name in ("bundle", "osm", "index"):
            path = getattr(self, name)
            if path is not None and not os.path.exists(path):
                raise CliError(f"config: {name} path {path!r} does not exist")
        if self.category_map not in ("human", "llm") and not os.path.exists(self.category_map):
            raise CliError(f"config: category_map {self.category_map!r} is neither human/llm nor a file")
        for s in list(self.split_sets) + list(self.cv_sets) + list(self.attack_sets):
            features.FeatureSet(s)
        for m in self.models:
            if m not in ("rf", "gbt"):
                raise CliError(f"config: unknown model {m!r}")
        for r in self.regimes:
            if r not in ("split", "kfold", "loso"):
                raise CliError(f"config: unknown regime {r!r}")
            if self.balance_for(r) not in ("smoteenn", "smote", "none"):
                raise CliError(f"config: unknown balance {self.balance_for(r)!r}")
        for s in self.scenarios:
            privacy.AttackScenario(s)


_LIST_KEYS = {f.name for f in fields(RunConfig) if f.name in (
    "split_sets", "cv_sets", "models", "regimes", "attack_sets", "scenarios")}


def _coerce(name: str, raw: str):
    default = getattr(RunConfig(), name)
    if name in _LIST_KEYS:
        return _split_list(raw)
    if name == "daytime":
        a, b = str(raw).replace(",", "-").split("-")
        return (int(a), int(b))
    if raw in ("", "none", "None") and name in ("bundle", "osm", "index", "origin_week"):
        return None
    if name == "origin_week":
        return int(raw)
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def load_config(path: Optional[str]) -> RunConfig:
    """Read an INI file; every key of every section maps onto a RunConfig field."""
    cfg = RunConfig()
    if path is None:
        return cfg
    if not os.path.exists(path):
        raise CliError(f"config file {path!r} not found")
    parser = configparser.ConfigParser()
    parser.read(path, encoding="utf-8")
    known = {f.name for f in fields(RunConfig)}
    base = os.path.dirname(os.path.abspath(path))
    for section in parser.sections():
        for key, raw in parser.items(section):
            if key not in known:
                raise CliError(f"config: unknown key {key!r} in [{section}]")
            value = _coerce(key, raw)
            if key in ("bundle", "osm", "index", "out") and value and not os.path.isabs(value):
                value = os.path.join(base, value)
            setattr(cfg, key, value)
    return cfg


# ---------------------------------------------------------------------------
# manifest and artifact helpers


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _record(out: str, paths: Sequence[str], command: str, cfg: RunConfig) -> None:
    mpath = os.path.join(out, MANIFEST)
    manifest = {"artifacts": {}}
    if os.path.exists(mpath):
        with open(mpath, encoding="utf-8") as fh:
            manifest = json.load(fh)
    for p in paths:
        rel = os.path.relpath(p, out)
        manifest["artifacts"][rel] = {"sha256": _sha256(p), "command": command,
                                      "config_hash": cfg.config_hash()}
    manifest["config_hash"] = cfg.config_hash()
    with open(mpath, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_json(path: str, obj) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _write_csv(path: str, df: pd.DataFrame) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    df.to_csv(path, index=False, lineterminator="\n", float_format="%.6g")
    return path


def _require(path: str, producer: str) -> str:
    if not os.path.exists(path):
        raise CliError(f"{path} not found; run `geopriv {producer}` first")
    return path


def _category_map(cfg: RunConfig) -> semantic.CategoryMap:
    if cfg.category_map in ("human", "llm"):
        return semantic.shipped_map(cfg.category_map)
    return semantic.load_category_map(cfg.category_map)


def _load_dataset(out: str) -> dataset.LabeledDataset:
    return dataset.LabeledDataset.from_csv(_require(os.path.join(out, DATASET_CSV), "extract"))


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(cfg: RunConfig) -> list[str]:
    if cfg.osm is None:
        raise CliError("ingest-osm needs --in (an OSM XML extract)")
    counter: Counter = Counter()
    idx = geo.build_index(geo.parse_osm(cfg.osm, counter), cfg.cell_deg)
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, INDEX_FILE)
    idx.save(path)
    logger.info("indexed %d features (%s)", len(idx), dict(sorted(counter.items())))
    return [path]


def cmd_synth(cfg: RunConfig) -> list[str]:
    spec = dataset.CohortSpec(n_users=cfg.users, n_weeks=cfg.weeks)
    bundle = dataset.generate_cohort(spec, cfg.seed)
    written = dataset.save_bundle(bundle, cfg.out)
    logger.info("synthetic cohort: %d users, %d fixes, %d EMA responses",
                cfg.users, len(bundle.gps), len(bundle.ema))
    return written


def cmd_extract(cfg: RunConfig) -> list[str]:
    if cfg.bundle is None:
        raise CliError("extract needs --bundle (run `geopriv synth` to make one)")
    bundle = dataset.load_bundle(cfg.bundle)
    if cfg.index is not None:
        idx = geo.MapIndex.load(cfg.index)
    elif cfg.osm is not None:
        idx = geo.build_index(geo.parse_osm(cfg.osm), cfg.cell_deg)
    elif bundle.osm is not None:
        idx = geo.build_index(geo.parse_osm(io.StringIO(bundle.osm)), cfg.cell_deg)
    else:
        raise CliError("no map: pass --index (from `geopriv ingest-osm`) or --osm")
    bc = dataset.BuildConfig(radius_m=cfg.radius_m, gap_cap_s=cfg.gap_cap_s,
                             origin_week=cfg.origin_week, daytime=tuple(cfg.daytime))
    ds = dataset.build_dataset(bundle, idx, _category_map(cfg), bc)
    if len(ds) == 0:
        logger.warning("dataset is empty")
    os.makedirs(cfg.out, exist_ok=True)
    csv_path = os.path.join(cfg.out, DATASET_CSV)
    jsonl_path = os.path.join(cfg.out, DATASET_JSONL)
    ds.to_csv(csv_path)
    ds.to_jsonl(jsonl_path)
    summary = _write_json(os.path.join(cfg.out, "extract.json"), {
        "rows": len(ds), "users": len(ds.day_counts()), "day_counts": ds.day_counts(),
        "stress_rate": float(ds.y.mean()) if len(ds) else None,
        "skipped_rows": dict(sorted(bundle.skipped.items())),
    })
    logger.info("dataset: %d labelled user-days", len(ds))
    return [csv_path, jsonl_path, summary]


def _model_spec(name: str) -> evaluation.ModelSpec:
    return evaluation.ModelSpec(name)


def cmd_train(cfg: RunConfig, fs: str, model: str, balance: str) -> list[str]:
    ds = _load_dataset(cfg.out)
    X, y, _, _ = ds.matrix(fs)
    tm = resampling.balance(X, y, balance, cfg.seed)
    fitted = learners.fit_model(model, tm.X, tm.y, cfg.seed)
    path = os.path.join(cfg.out, "models", f"{model}_{fs}.json")
    os.makedirs(os.path.dirname(path), exist_ok=True)
    learners.save_model(fitted, path)
    return [path]


def eval_path(out: str, regime: str, fs: str, model: str) -> str:
    return os.path.join(out, "eval", f"{regime}_{fs}_{model}.json")


def cmd_eval(cfg: RunConfig, regime: str, fs: str, model: str, balance: Optional[str]) -> list[str]:
    ds = _load_dataset(cfg.out)
    X, y, users, rows = ds.matrix(fs)
    balance = balance or cfg.balance_for(regime)
    spec = _model_spec(model)
    if regime == "split":
        rep = evaluation.random_split_eval(X, y, spec, cfg.seed, rows, fs, balance)
    elif regime == "kfold":
        rep = evaluation.kfold_eval(X, y, spec, cfg.k, cfg.seed, rows, fs, balance)
    elif regime == "loso":
        rep = evaluation.loso_eval(X, y, users, spec, cfg.min_days, cfg.seed, rows, fs, balance)
    else:
        raise CliError(f"unknown regime {regime!r}")
    evaluation.verify_no_leakage(rep)
    logger.info("%s %s %s: acc %.1f f1 %.1f", regime, fs, model, rep.accuracy_mean, rep.f1_mean)
    return [_write_json(eval_path(cfg.out, regime, fs, model), rep.to_dict())]


def attack_path(out: str, fs: str, scenario: str) -> str:
    return os.path.join(out, "attack", f"{fs}_{scenario}.json")


def cmd_attack(cfg: RunConfig, fs: str, scenario: str) -> list[str]:
    ds = _load_dataset(cfg.out)
    X, _, users, _ = ds.matrix(fs)
    rep = privacy.reid_attack(X, users, scenario, cfg.seed, fs)
    logger.info("attack %s %s: top-1 %.1f top-5 %.1f", fs, scenario, rep.top1, rep.top5)
    jpath = _write_json(attack_path(cfg.out, fs, scenario), rep.to_dict())
    curve = pd.DataFrame({"k": np.arange(1, len(rep.curve) + 1), "accuracy": rep.curve})
    cpath = _write_csv(jpath[:-len(".json")] + "_topk.csv", curve)
    return [jpath, cpath]


def cmd_analyze(cfg: RunConfig, fs: str = "AF") -> list[str]:
    ds = _load_dataset(cfg.out)
    X, y, users, _ = ds.matrix(fs)
    names = list(features.FeatureSet(fs).names)
    stats = analysis.screen_features(X, y, names)
    f_df = pd.DataFrame([{"feature": s.feature, "f_stat": s.f_stat, "p_value": s.p_value,
                          "r_value": s.r_value} for s in stats])
    mi = privacy.mi_table(X, users, names, cfg.mi_bins)
    pa = set(features.FeatureSet.PA.names)
    mi_df = pd.DataFrame([{"feature": n, "mutual_information": v, "in_AF": 1, "in_PA": int(n in pa)}
                          for n, v in mi])
    base = os.path.join(cfg.out, "analysis")
    return [_write_csv(os.path.join(base, "feature_stats.csv"), f_df),
            _write_csv(os.path.join(base, "mi.csv"), mi_df)]


def _fmt_pm(mean: float, std: float) -> str:
    return f"{mean:.0f}±{std:.0f}"


def cmd_report(cfg: RunConfig) -> list[str]:
    out = cfg.out
    rdir = os.path.join(out, "report")
    written = []

    written.append(_write_csv(os.path.join(rdir, "feature_sets.csv"), pd.DataFrame(
        [{"feature_set": fs.value, "n_features": len(fs.names)} for fs in features.FeatureSet])))

    # re-identification: scenario rows x feature-set columns, "top1 (top5)"
    rows, long_rows, curves = [], [], {}
    any_attack = False
    for sc in cfg.scenarios:
        row = {"scenario": sc}
        for fs in cfg.attack_sets:
            p = attack_path(out, fs, sc)
            if not os.path.exists(p):
                row[fs] = ""
                continue
            any_attack = True
            with open(p, encoding="utf-8") as fh:
                rep = json.load(fh)
            row[fs] = f"{rep['top1']:.0f} ({rep['top5']:.0f})"
            long_rows.append({"scenario": sc, "feature_set": fs, "top1": rep["top1"],
                              "top5": rep["top5"]})
            curves[(sc, fs)] = rep["curve"]
        rows.append(row)
    if not any_attack:
        raise CliError(f"no attack results under {out}/attack; run `geopriv attack` first")
    written.append(_write_csv(os.path.join(rdir, "reid.csv"), pd.DataFrame(rows)))
    written.append(_write_csv(os.path.join(rdir, "reid_long.csv"), pd.DataFrame(long_rows)))
    for sc in cfg.scenarios:
        cols = {fs: curves[(sc, fs)] for fs in cfg.attack_sets if (sc, fs) in curves}
        if cols:
            n = max(len(c) for c in cols.values())
            df = pd.DataFrame({"k": np.arange(1, n + 1)})
            for fs, c in cols.items():
                df[fs] = c
            written.append(_write_csv(os.path.join(rdir, f"topk_{sc}.csv"), df))

    # utility tables: metric rows x (set, model) columns
    for regime in cfg.regimes:
        sets = cfg.split_sets if regime == "split" else cfg.cv_sets
        table = {"metric": ["Acc", "F1"]}
        for fs in sets:
            for m in cfg.models:
                p = eval_path(out, regime, fs, m)
                if not os.path.exists(p):
                    continue
                with open(p, encoding="utf-8") as fh:
                    rep = json.load(fh)
                col = f"{fs}_{m.upper() if m == 'rf' else 'GBT'}"
                if regime == "split":
                    table[col] = [f"{rep['accuracy_mean']:.0f}", f"{rep['f1_mean']:.0f}"]
                else:
                    table[col] = [_fmt_pm(rep["accuracy_mean"], rep["accuracy_std"]),
                                  _fmt_pm(rep["f1_mean"], rep["f1_std"])]
        if len(table) == 1:
            raise CliError(f"no {regime} results under {out}/eval; run `geopriv eval --regime {regime}` first")
        written.append(_write_csv(os.path.join(rdir, f"utility_{regime}.csv"), pd.DataFrame(table)))

    adir = os.path.join(out, "analysis")
    mi = pd.read_csv(_require(os.path.join(adir, "mi.csv"), "analyze"))
    written.append(_write_csv(os.path.join(rdir, "mi_top10.csv"), mi.head(10)))
    fst = pd.read_csv(_require(os.path.join(adir, "feature_stats.csv"), "analyze"))
    written.append(_write_csv(os.path.join(rdir, "ftest_top10.csv"),
                              fst.head(10)[["feature", "p_value", "r_value"]]))

    # weekly means of recreation and workplace time by stress label
    ds = pd.read_csv(_require(os.path.join(out, DATASET_CSV), "extract"))
    for col, name in (("recreational_activities_time", "weekly_recreation.csv"),
                      ("working_time", "weekly_workplace.csv")):
        g = ds.groupby(["week", "label"])[col].mean().unstack("label")
        g = g.reindex(columns=[0, 1])
        g.columns = ["non_stressed", "stressed"]
        written.append(_write_csv(os.path.join(rdir, name), g.reset_index()))
    return written


def cmd_run(cfg: RunConfig) -> list[str]:
    """synth (or the configured bundle) -> extract -> eval -> attack -> analyze -> report."""
    written = []
    if cfg.bundle is None:
        bdir = os.path.join(cfg.out, "bundle")
        written += _recorded(cfg, "synth", cmd_synth, RunConfig(**{**asdict(cfg), "out": bdir}))
        cfg = RunConfig(**{**asdict(cfg), "bundle": bdir})
    written += _recorded(cfg, "extract", cmd_extract, cfg)
    for regime in cfg.regimes:
        for fs in (cfg.split_sets if regime == "split" else cfg.cv_sets):
            for m in cfg.models:
                written += _recorded(cfg, "eval", cmd_eval, cfg, regime, fs, m, None)
    for fs in cfg.attack_sets:
        for sc in cfg.scenarios:
            written += _recorded(cfg, "attack", cmd_attack, cfg, fs, sc)
    written += _recorded(cfg, "analyze", cmd_analyze, cfg)
    written += _recorded(cfg, "report", cmd_report, cfg)
    return written


def _recorded(cfg: RunConfig, name: str, fn, *args) -> list[str]:
    paths = fn(*args)
    _record(cfg.out, paths, name, cfg)
    return paths


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geopriv", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="INI config file; flags override it")
    p.add_argument("--log-level", default="INFO")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help="working directory"):
        sp.add_argument("--out", help=out_help)
        sp.add_argument("--seed", type=int)
        # also accepted after the subcommand
        sp.add_argument("--config", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
        sp.add_argument("--log-level", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
        return sp

    sp = common(sub.add_parser("ingest-osm", help="parse an OSM extract into a spatial index"))
    sp.add_argument("--in", dest="osm", help="OSM XML file")
    sp.add_argument("--cell-deg", dest="cell_deg", type=float)

    sp = common(sub.add_parser("synth", help="generate a synthetic cohort bundle"), "bundle directory")
    sp.add_argument("--users", type=int)
    sp.add_argument("--weeks", type=int)

    sp = common(sub.add_parser("extract", help="bundle + map -> labelled daily feature rows"))
    sp.add_argument("--bundle")
    sp.add_argument("--index", help="index from ingest-osm")
    sp.add_argument("--osm", help="OSM XML to index on the fly")
    sp.add_argument("--map", dest="category_map", help="human, llm or a CSV path")
    sp.add_argument("--radius", dest="radius_m", type=float)

    sp = common(sub.add_parser("train", help="fit one model on the whole dataset"))
    sp.add_argument("--set", dest="fs", default="PA", choices=[f.value for f in features.FeatureSet])
    sp.add_argument("--model", default="rf", choices=["rf", "gbt"])
    sp.add_argument("--balance", default="smoteenn", choices=["smoteenn", "smote", "none"])

    sp = common(sub.add_parser("eval", help="utility evaluation"))
    sp.add_argument("--regime", default="split", choices=["split", "kfold", "loso"])
    sp.add_argument("--set", dest="fs", default="PA", choices=[f.value for f in features.FeatureSet])
    sp.add_argument("--model", default="rf", choices=["rf", "gbt"])
    sp.add_argument("--balance", choices=["smoteenn", "smote", "none"])

    sp = common(sub.add_parser("attack", help="re-identification attack"))
    sp.add_argument("--set", dest="fs", default="PA", choices=[f.value for f in features.FeatureSet])
    sp.add_argument("--scenario", default="rich", choices=[s.value for s in privacy.AttackScenario])

    sp = common(sub.add_parser("analyze", help="F-test screening and identity MI"))
    sp.add_argument("--set", dest="fs", default="AF", choices=[f.value for f in features.FeatureSet])

    common(sub.add_parser("report", help="aggregate results into table-shaped CSVs"))
    sp = common(sub.add_parser("run", help="the whole default pipeline"))
    sp.add_argument("--bundle")
    sp.add_argument("--users", type=int)
    sp.add_argument("--weeks", type=int)
    return p


_OVERRIDES = ("out", "seed", "osm", "cell_deg", "users", "weeks", "bundle", "index",
              "category_map", "radius_m")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        for key in _OVERRIDES:
            v = getattr(args, key, None)
            if v is not None:
                setattr(cfg, key, v)
        cfg.validate()
        c = args.command
        if c == "ingest-osm":
            paths = cmd_ingest(cfg)
        elif c == "synth":
            paths = cmd_synth(cfg)
        elif c == "extract":
            paths = cmd_extract(cfg)
        elif c == "train":
            paths = cmd_train(cfg, args.fs, args.model, args.balance)
        elif c == "eval":
            paths = cmd_eval(cfg, args.regime, args.fs, args.model, args.balance)
        elif c == "attack":
            paths = cmd_attack(cfg, args.fs, args.scenario)
        elif c == "analyze":
            paths = cmd_analyze(cfg, args.fs)
        elif c == "report":
            paths = cmd_report(cfg)
        else:
            cmd_run(cfg)
            return 0
        _record(cfg.out, paths, c, cfg)
        for p in paths:
            print(p)
        return 0
    except (CliError, FileNotFoundError, ValueError, KeyError,
            geo.OsmParseError, semantic.CategoryMapError) as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
