"""``stsir`` command line: fit, compare, predict, simulate, diagnose.

Every output is a plain CSV (or JSON for metadata) written atomically. Errors
are reported as one line on stderr, ``stsir: error code=<n> type=<T> message=<json>``,
with exit codes 2 (configuration), 3 (data) and 4 (numerical failure).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .forecast import (SimulationError, one_step_forecast, replicate_within_sample,
                       scenario_from_dict, simulate_panel)
from .ingest import (AdjacencyGraph, DataError, PanelData, load_adjacency, load_panel,
                     write_adjacency, write_panel_csvs)
from .mcmc import (ChainTrace, SamplerConfig, SamplerError, meta_path, posterior_summary,
                   run_chain)
from .metrics import dic, geweke_report, mse_profile, mspe_profile, rhat
from .model import DataModel, ModelError, ModelSpec, Variant, build_design

log = logging.getLogger("stsir")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    cases: Path
    population: Path
    covariate: Path
    adjacency: Path | None
    date_range: tuple[str, str]
    model: ModelSpec
    sampler: SamplerConfig
    output_dir: Path
    mode: str = "raw"
    name: str = ""
    extra: dict = field(default_factory=dict)

    def label(self) -> str:
        return self.name or f"M{int(self.model.variant)}"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "paths": {"cases": str(self.cases), "population": str(self.population),
                      "covariate": str(self.covariate),
                      "adjacency": None if self.adjacency is None else str(self.adjacency)},
            "date_range": list(self.date_range), "model": self.model.to_dict(),
            "sampler": self.sampler.to_dict(), "output_dir": str(self.output_dir), "mode": self.mode,
        }


def load_run_config(path, seed=None, out=None, mode=None) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    base = path.parent
    try:
        paths = raw["paths"]

        def resolve(key, required=True):
            val = paths.get(key)
            if val is None:
                if required:
                    raise ConfigError(f"config {path}: paths.{key} is required")
                return None
            p = Path(val)
            p = p if p.is_absolute() else base / p
            if not p.exists():
                raise ConfigError(f"config {path}: {key} file {p} does not exist")
            return p

        model = ModelSpec.from_dict(raw.get("model", {}))
        sampler = dict(raw.get("sampler", {}))
        if seed is not None:
            sampler["seed"] = int(seed)
        mode = mode or raw.get("mode", "raw")
        if mode not in ("raw", "smoothed"):
            raise ConfigError(f"mode must be raw or smoothed, got {mode!r}")
        model = model.evolve(data_model=DataModel.LOGNORMAL if mode == "smoothed" else DataModel.POISSON)
        out_dir = Path(out or raw.get("output_dir", "out"))
        if not out_dir.is_absolute() and out is None:
            out_dir = base / out_dir
        dr = raw["date_range"]
        if len(dr) != 2:
            raise ConfigError("date_range must be [start, end]")
        return RunConfig(
            cases=resolve("cases"), population=resolve("population"), covariate=resolve("covariate"),
            adjacency=resolve("adjacency", required=model.needs_graph), date_range=(dr[0], dr[1]),
            model=model, sampler=SamplerConfig.from_dict(sampler), output_dir=out_dir, mode=mode,
            name=raw.get("name", ""),
        )
    except KeyError as exc:
        raise ConfigError(f"config {path}: missing key {exc}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"config {path}: {exc}") from exc


def load_inputs(cfg: RunConfig) -> tuple[PanelData, AdjacencyGraph | None]:
    panel = load_panel(cfg.cases, cfg.population, cfg.covariate, cfg.date_range)
    if cfg.mode == "smoothed":
        panel = panel.with_smoothing()
    graph = load_adjacency(cfg.adjacency, panel.region_ids) if cfg.adjacency is not None else None
    return panel, graph


def panel_digest(panel: PanelData) -> str:
    h = hashlib.sha256()
    h.update(json.dumps([panel.region_ids, [d.isoformat() for d in panel.dates]]).encode())
    for arr in (panel.sym, panel.deaths, panel.sus_init, panel.poverty):
        h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
    return h.hexdigest()[:16]


# --- output helpers ---------------------------------------------------------

def write_csv(path, header, rows) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    os.replace(tmp, path)


def write_json(path, obj) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
    os.replace(tmp, path)


def _cell_rows(panel: PanelData, *mats):
    for i, rid in enumerate(panel.region_ids):
        for j, d in enumerate(panel.dates):
            yield (rid, d.isoformat()) + tuple(float(mt[i, j]) for mt in mats)


def merge_traces(traces: list[ChainTrace]) -> ChainTrace:
    if len(traces) == 1:
        return traces[0]
    t0 = traces[0]
    mu = None
    if all(t.mu_snapshots is not None for t in traces):
        mu = np.concatenate([t.mu_snapshots for t in traces])
    return ChainTrace(t0.spec, t0.layout, np.concatenate([t.theta for t in traces]),
                      np.concatenate([t.deviances for t in traces]),
                      np.concatenate([t.iterations for t in traces]), t0.accept_rates, mu, t0.seed)


# --- subcommands ------------------------------------------------------------

def fit(cfg: RunConfig, chains: int = 1) -> dict:
    panel, graph = load_inputs(cfg)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    design = build_design(panel, cfg.model, graph)
    traces = []
    for k in range(chains):
        sampler = SamplerConfig.from_dict({**cfg.sampler.to_dict(), "seed": cfg.sampler.seed + k, "store_mu": True})
        log.info("fitting %s chain %d/%d (seed %d)", cfg.label(), k + 1, chains, sampler.seed)
        tr = run_chain(panel, cfg.model, graph, sampler)
        tr.write_csv(out / ("trace.csv" if chains == 1 else f"trace_chain{k + 1}.csv"))
        traces.append(tr)
    trace = merge_traces(traces)

    write_csv(out / "summary.csv", ["parameter", "mean", "sd", "q2.5", "q97.5"],
              [(r["parameter"], r["mean"], r["sd"], r["q2.5"], r["q97.5"]) for r in posterior_summary(trace)])
    res = dic(trace.deviances)
    write_csv(out / "dic.csv", ["model", "dic", "pd", "mean_deviance"],
              [(cfg.label(), res.dic, res.p_d, res.mean_deviance)])
    grows = []
    for k, tr in enumerate(traces):
        names, vals = tr.table()
        if len(tr) >= 100:
            rep = geweke_report(names + ["deviance"], np.column_stack([vals, tr.deviances]))
            grows += [(k + 1, n, z, int(n in rep.degenerate)) for n, z in rep.z.items()]
    write_csv(out / "geweke.csv", ["chain", "parameter", "z", "degenerate"], grows)
    if chains > 1:
        names = traces[0].table()[0]
        stacked = np.stack([np.column_stack([t.table()[1], t.deviances]) for t in traces])
        write_csv(out / "rhat.csv", ["parameter", "rhat"],
                  [(n, rhat(stacked[:, :, k])) for k, n in enumerate(names + ["deviance"])])

    observed = design.counts if design.lognormal else panel.sym.astype(float)
    mu = trace.mu_snapshots
    write_csv(out / "fitted_mean.csv", ["fips", "date", "observed", "post_mean", "lower95", "upper95"],
              _cell_rows(panel, observed, mu.mean(axis=0), np.quantile(mu, 0.025, axis=0),
                         np.quantile(mu, 0.975, axis=0)))
    write_csv(out / "mse.csv", ["fips", "date", "mse"], _cell_rows(panel, mse_profile(mu, observed)))
    reps = replicate_within_sample(trace, panel, cfg.model, graph, seed=cfg.sampler.seed)
    write_csv(out / "mspe.csv", ["fips", "date", "mspe"], _cell_rows(panel, mspe_profile(reps, observed)))

    lay = trace.layout
    effects = []
    if lay.u_kind == 1:
        effects.append(("b_spatial", trace.theta[:, lay.i_u:lay.i_tau].mean(axis=0)))
    if cfg.model.variant == Variant.M5:
        effects.append(("b0_space", trace.theta[:, : lay.m].mean(axis=0)))
        effects.append(("v", trace.theta[:, lay.i_u:lay.i_tau].mean(axis=0)))
    if effects:
        write_csv(out / "region_effects.csv", ["fips"] + [n for n, _ in effects],
                  [(rid,) + tuple(float(e[i]) for _, e in effects) for i, rid in enumerate(panel.region_ids)])

    info = {"config": cfg.to_dict(), "panel_hash": panel_digest(panel), "spec_hash": cfg.model.digest(),
            "chains": chains, "dic": res.__dict__, "accept_rates": trace.accept_rates,
            "m": panel.m, "T": panel.T, "label": cfg.label()}
    write_json(out / "run.json", info)
    return info


def predict(cfg: RunConfig, trace_path=None, seed: int | None = None) -> Path:
    panel, graph = load_inputs(cfg)
    trace_path = Path(trace_path) if trace_path else cfg.output_dir / "trace.csv"
    if not trace_path.exists() or not Path(meta_path(trace_path)).exists():
        raise ConfigError(f"trace {trace_path} (and its .meta.json) not found")
    trace = ChainTrace.read_csv(trace_path, spec=cfg.model)
    fc = one_step_forecast(trace, panel, cfg.model, graph, seed=cfg.sampler.seed if seed is None else seed)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.output_dir / "forecast.csv"
    write_csv(path, ["fips", "pred_mean", "lower95", "upper95", "n_draws"], fc.rows())
    return path


def compare(sources: list[str], out: Path, seed=None, mode=None, chains: int = 1) -> Path:
    if len(sources) < 2:
        raise ConfigError("compare needs at least two configs or fit directories")
    rows, hashes = [], set()
    for src in sources:
        p = Path(src)
        if p.is_dir():
            info = json.loads((p / "run.json").read_text(encoding="utf-8"))
        else:
            cfg = load_run_config(p, seed=seed, mode=mode)
            info = fit(cfg, chains=chains)
        hashes.add(info["panel_hash"])
        d = info["dic"]
        rows.append((info["label"], d["dic"], d["p_d"], d["mean_deviance"]))
    if len(hashes) != 1:
        raise DataError("compared fits do not share the same panel")
    rows.sort(key=lambda r: r[1])
    out.mkdir(parents=True, exist_ok=True)
    path = out / "compare.csv"
    write_csv(path, ["model", "dic", "pd", "mean_deviance"], rows)
    return path


def simulate(scenario_path, out: Path, seed=None) -> Path:
    try:
        raw = json.loads(Path(scenario_path).read_text(encoding="utf-8"))
        if seed is not None:
            raw["seed"] = int(seed)
        sc = scenario_from_dict(raw)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad scenario {scenario_path}: {exc}") from exc
    panel = simulate_panel(sc)
    out.mkdir(parents=True, exist_ok=True)
    write_panel_csvs(panel, out / "cases.csv", out / "population.csv", out / "covariate.csv")
    graph = sc.graph or AdjacencyGraph.ring(sc.m)
    write_adjacency(graph, panel.region_ids, out / "adjacency.csv")
    p = sc.params
    truth = {"b0": p.b0_scalar, "b1": p.b1, "b2": p.b2, "tau_b": p.tau_b, "tau_v": p.tau_v,
             "poverty": sc.poverty.tolist(), "seed": sc.seed}
    for name in ("b_spatial", "b0_time", "b0_space", "v_uncorr"):
        v = getattr(p, name)
        if v is not None:
            truth[name] = np.asarray(v).tolist()
    write_json(out / "truth.json", truth)
    write_json(out / "fit.json", {
        "paths": {"cases": "cases.csv", "population": "population.csv",
                  "covariate": "covariate.csv", "adjacency": "adjacency.csv"},
        "date_range": [panel.dates[0].isoformat(), panel.dates[-1].isoformat()],
        "model": sc.spec.to_dict(), "sampler": SamplerConfig().to_dict(), "output_dir": "fit", "mode": "raw",
    })
    return out


def diagnose(trace_path, out: Path | None) -> dict:
    trace = ChainTrace.read_csv(trace_path)
    names, vals = trace.table()
    rep = geweke_report(names + ["deviance"], np.column_stack([vals, trace.deviances]))
    res = dic(trace.deviances)
    out = out or Path(trace_path).parent
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "geweke.csv", ["chain", "parameter", "z", "degenerate"],
              [(1, n, z, int(n in rep.degenerate)) for n, z in rep.z.items()])
    write_csv(out / "dic.csv", ["model", "dic", "pd", "mean_deviance"],
              [(f"M{int(trace.spec.variant)}", res.dic, res.p_d, res.mean_deviance)])
    flagged = [n for n, z in rep.z.items() if abs(z) > 2]
    return {"dic": res.dic, "pd": res.p_d, "n_draws": len(trace), "geweke_flagged": flagged}


# --- entry point ------------------------------------------------------------

def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # the same flags are accepted before and after the subcommand; the copy on
    # each subparser uses SUPPRESS so it does not overwrite values given earlier
    def dflt(v):
        return argparse.SUPPRESS if suppress else v

    glob = argparse.ArgumentParser(add_help=False)
    glob.add_argument("--config", action="append", default=dflt([]),
                      help="run configuration JSON (repeatable for compare)")
    glob.add_argument("--seed", type=int, default=dflt(None), help="override the sampler / scenario seed")
    glob.add_argument("--out", type=Path, default=dflt(None), help="output directory")
    glob.add_argument("--mode", choices=["raw", "smoothed"], default=dflt(None))
    glob.add_argument("--chains", type=int, default=dflt(1))
    glob.add_argument("-v", "--verbose", action="store_true", default=dflt(False))
    return glob


def build_parser() -> argparse.ArgumentParser:
    glob = _global_flags(suppress=True)
    parser = argparse.ArgumentParser(prog="stsir", description=__doc__.splitlines()[0],
                                     parents=[_global_flags(suppress=False)])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("fit", parents=[glob], help="fit one model and write trace + summaries")
    p = sub.add_parser("compare", parents=[glob], help="DIC table over several configs or fit dirs")
    p.add_argument("sources", nargs="*")
    p = sub.add_parser("predict", parents=[glob], help="one-step-ahead forecast from a stored trace")
    p.add_argument("--trace", type=Path, default=None)
    p = sub.add_parser("simulate", parents=[glob], help="simulate a panel from a scenario JSON")
    p.add_argument("scenario", type=Path)
    p = sub.add_parser("diagnose", parents=[glob], help="Geweke and DIC for a stored trace")
    p.add_argument("--trace", type=Path, required=True)
    return parser


def _single_config(args) -> RunConfig:
    if len(args.config) != 1:
        raise ConfigError(f"{args.command} needs exactly one --config")
    return load_run_config(args.config[0], seed=args.seed, out=args.out, mode=args.mode)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.chains < 1:
        raise ConfigError("--chains must be >= 1")
    if args.command == "fit":
        cfg = _single_config(args)
        info = fit(cfg, chains=args.chains)
        print(f"fit {info['label']}: DIC={info['dic']['dic']:.3f} pD={info['dic']['p_d']:.3f} -> {cfg.output_dir}")
    elif args.command == "compare":
        out = args.out or Path(".")
        path = compare(list(args.sources) + list(args.config), out, seed=args.seed, mode=args.mode,
                       chains=args.chains)
        print(path)
    elif args.command == "predict":
        print(predict(_single_config(args), args.trace))
    elif args.command == "simulate":
        print(simulate(args.scenario, args.out or Path("."), seed=args.seed))
    elif args.command == "diagnose":
        print(json.dumps(diagnose(args.trace, args.out)))
    return EXIT_OK


def _fail(code: int, exc: Exception) -> int:
    msg = json.dumps(str(exc))
    print(f"stsir: error code={code} type={type(exc).__name__} message={msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        return run(argv)
    except (ConfigError, ModelError) as exc:
        return _fail(EXIT_CONFIG, exc)
    except (DataError, FileNotFoundError) as exc:
        return _fail(EXIT_DATA, exc)
    except (SamplerError, SimulationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_NUMERIC, exc)
    except ValueError as exc:
        return _fail(EXIT_CONFIG, exc)


if __name__ == "__main__":
    sys.exit(main())
