"""Multi-seed experiment runner, run CSV / manifest I/O and quantile summaries.

Experiment files are TOML (or the JSON manifest a previous run wrote)::

    name = "quadratic"
    seeds = [0, 1, 2]            # or "0..19"
    stride = 10

    [problem]
    kind = "quadratic"           # or "logistic"
    seed = 0
    d = 20
    kappa = 1e6
    wishart_scale = 1e-2

    [[optimizer]]
    name = "sbfgs"
    kind = "sbfgs-dense"
    eta = 0.7
    rho = 100.0
    m_lower = 1e5
    m_upper = "L"                # problem smoothness
    h0_scale = "1/L"

Numeric optimizer fields accept the tokens ``"L"`` and ``"1/L"`` (optionally
scaled, e.g. ``"0.5/L"``), resolved against the problem's smoothness
constant. See README for the full schema and the file layout written.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .curvature import DEFAULT_P_CAP, CurvatureConfig
from .optimizer import OptimizerConfig, RunRecord, epoch_accounting, run
from .problems import gen_quadratic, load_digits, logistic_from_file

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

RUN_COLUMNS = ("iter", "epoch", "gap", "accepted", "lambda_min", "lambda_max", "psi",
               "wall_time_ns")
SUMMARY_COLUMNS = ("iter", "epoch", "median", "q05", "q25", "q75", "q95", "n_runs",
                   "n_diverged")
STABILITY_COLUMNS = ("config", "eta", "n_seeds", "n_diverged", "stable", "median_final_gap")
QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


class HarnessError(RuntimeError):
    pass


class MisalignedRunsError(HarnessError):
    pass


# --------------------------------------------------------------------------
# experiment specification
# --------------------------------------------------------------------------

@dataclass
class ExperimentSpec:
    problem: Dict
    optimizers: List[Dict]
    seeds: List[int] = field(default_factory=lambda: list(range(50)))
    out: Optional[str] = None
    stride: int = 10
    name: str = "experiment"
    record_wall_time: bool = True
    #: documentation-only rows (e.g. baseline settings); never read
    reference: Dict = field(default_factory=dict)

    def validate(self):
        if not self.optimizers:
            raise HarnessError("experiment needs at least one [[optimizer]] table")
        if not self.seeds:
            raise HarnessError("experiment needs at least one seed")
        names = [o.get("name") for o in self.optimizers]
        if any(not n for n in names):
            raise HarnessError("every optimizer needs a name")
        if len(set(names)) != len(names):
            raise HarnessError(f"duplicate optimizer names in {names}")
        for n in names:
            if not re.fullmatch(r"[A-Za-z0-9_.@=+-]+", n):
                raise HarnessError(f"optimizer name {n!r} is not filesystem safe")
        if self.stride < 1:
            raise HarnessError("stride must be positive")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "spec" in data and "runs" in data:  # a manifest
            data = dict(data["spec"])
        if "optimizer" in data:
            data["optimizers"] = data.pop("optimizer")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise HarnessError(f"unknown experiment keys: {sorted(unknown)}")
        for key in ("problem", "optimizers"):
            if key not in data:
                raise HarnessError(f"experiment is missing {key!r}")
        if "seeds" in data:
            data["seeds"] = parse_seeds(data["seeds"])
        return cls(**data).validate()


def parse_seeds(value):
    """``[0, 1]``, ``"0..19"`` (inclusive) or ``"0,3,5"``."""
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    if isinstance(value, int):
        return [value]
    text = str(value).strip()
    m = re.fullmatch(r"(-?\d+)\s*\.\.\s*(-?\d+)", text)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        return list(range(lo, hi + 1))
    return [int(t) for t in text.split(",") if t.strip()]


def load_spec(path) -> ExperimentSpec:
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix.lower() == ".json":
        data = json.loads(raw)
    else:
        data = tomllib.loads(raw.decode())
    return ExperimentSpec.from_dict(data)


_L_TOKEN = re.compile(r"^\s*([0-9.eE+-]*)\s*(\*?)\s*(/?)\s*L\s*$")


def resolve_value(value, L):
    """Numbers pass through; ``"L"``, ``"1/L"``, ``"0.7/L"``, ``"2*L"`` resolve."""
    if value is None or isinstance(value, (int, float)):
        return value
    m = _L_TOKEN.match(str(value))
    if not m:
        try:
            return float(value)
        except ValueError:
            raise HarnessError(f"cannot interpret {value!r} as a number") from None
    if L is None:
        raise HarnessError(f"{value!r} needs a problem with a known smoothness constant")
    coef = float(m.group(1)) if m.group(1) else 1.0
    return coef / L if m.group(3) else coef * L


_OPT_KEYS = {"name", "kind", "eta", "batch_size", "max_iters", "rho", "r", "h0_scale",
             "m_lower", "m_upper", "p_cap", "restart_interval", "snapshots"}


def build_config(opt: Dict, L, seed, stride, record_wall_time=True) -> OptimizerConfig:
    unknown = set(opt) - _OPT_KEYS
    if unknown:
        raise HarnessError(f"optimizer {opt.get('name')!r}: unknown keys {sorted(unknown)}")
    m_upper = resolve_value(opt.get("m_upper"), L)
    if m_upper is not None and m_upper <= 0:
        m_upper = None
    curvature = CurvatureConfig(m_lower=resolve_value(opt.get("m_lower", 0.0), L),
                                m_upper=m_upper,
                                p_cap=resolve_value(opt.get("p_cap", DEFAULT_P_CAP), L))
    restart = opt.get("restart_interval") or None
    cfg = OptimizerConfig(
        kind=opt.get("kind", "sbfgs-dense"),
        eta=resolve_value(opt.get("eta", 0.7), L),
        batch_size=int(opt.get("batch_size", 10)),
        max_iters=int(opt.get("max_iters", 1000)),
        curvature=curvature,
        rho=resolve_value(opt.get("rho", 1.0), L),
        r=int(opt.get("r", 10)),
        h0_scale=resolve_value(opt.get("h0_scale", 1.0), L),
        seed=int(seed),
        restart_interval=restart,
        stride=int(stride),
        record_wall_time=record_wall_time,
        snapshots=opt.get("snapshots"),
    )
    return cfg.validate()


def build_problem(pspec: Dict, base_dir=None):
    kind = pspec.get("kind")
    if kind == "quadratic":
        return gen_quadratic(pspec.get("seed", 0), d=pspec.get("d", 20),
                             kappa=pspec.get("kappa", 1e6),
                             wishart_scale=pspec.get("wishart_scale", 1e-2))
    if kind == "logistic":
        lam = pspec.get("lambda_lr", 1e-5)
        path = pspec.get("path", "digits")
        if path == "digits":
            return load_digits(lambda_lr=lam)
        p = Path(path)
        if not p.is_absolute() and base_dir is not None and not p.exists():
            p = Path(base_dir) / p
        return logistic_from_file(p, format=pspec.get("format"), lambda_lr=lam,
                                  n_features=pspec.get("n_features"),
                                  n_classes=pspec.get("n_classes"))
    raise HarnessError(f"unknown problem kind {kind!r}")


def starting_point(problem, pspec):
    mode = pspec.get("x0", "problem")
    if mode == "zeros":
        return np.zeros(problem.dim)
    if mode == "problem":
        return None  # the problem's own x0
    raise HarnessError(f"unknown x0 mode {mode!r}")


# --------------------------------------------------------------------------
# run files
# --------------------------------------------------------------------------

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def run_rows(record: RunRecord, n_samples=None):
    epochs = (epoch_accounting(record, n_samples) if n_samples
              else [None] * len(record.rows))
    for row, ep in zip(record.rows, epochs):
        yield (row.iter, ep, row.gap, row.accepted, row.lambda_min, row.lambda_max,
               row.psi, row.wall_time_ns)


def format_run_csv(record: RunRecord, n_samples=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RUN_COLUMNS)
    for values in run_rows(record, n_samples):
        w.writerow([_fmt(v) for v in values])
    return buf.getvalue()


def read_run_csv(path):
    """Columns as float arrays; empty fields become NaN."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != RUN_COLUMNS:
            raise HarnessError(f"{path}: unexpected header {header}")
        rows = list(reader)
    cols = {}
    for j, name in enumerate(RUN_COLUMNS):
        cols[name] = np.array([float(r[j]) if r[j] != "" else np.nan for r in rows])
    return cols


def save_snapshots(path, record: RunRecord):
    snaps = record.snapshots
    if not snaps:
        return None
    d = snaps[0].H_before.shape[0]

    def vec(s, name):
        return getattr(s.pair, name) if s.pair is not None else np.full(d, np.nan)

    np.savez_compressed(
        path,
        iters=np.array([s.iter for s in snaps]),
        accepted=np.array([s.accepted for s in snaps]),
        H_before=np.stack([s.H_before for s in snaps]),
        H_after=np.stack([s.H_after for s in snaps]),
        s=np.stack([vec(s, "s") for s in snaps]),
        y=np.stack([vec(s, "y") for s in snaps]),
        p=np.array([s.pair.p if s.pair is not None else np.nan for s in snaps]),
        H0=record.H0,
    )
    return path


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------

def _check_writable(out: Path):
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise HarnessError(f"output directory {out} is not writable: {exc}") from exc


def _execute(cells, jobs):
    def one(cell):
        problem, cfg, x0 = cell["problem"], cell["config"], cell["x0"]
        try:
            return run(problem, cfg, x0), None
        except Exception as exc:  # recorded per cell, experiment continues
            return None, f"{type(exc).__name__}: {exc}"

    jobs = max(1, int(jobs or os.cpu_count() or 1))
    if jobs == 1:
        return [one(c) for c in cells]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, cells))


def _run_cells(out: Path, cells, problem, jobs):
    results = _execute(cells, jobs)
    runs = []
    n_samples = getattr(problem, "n_samples", None)
    for cell, (rec, err) in zip(cells, results):
        rel = Path("runs") / cell["dir"] / f"seed_{cell['seed']}.csv"
        entry = {"config": cell["name"], "seed": cell["seed"], "file": rel.as_posix()}
        if "eta" in cell:
            entry["eta"] = cell["eta"]
        if rec is None:
            entry.update(status="error", error=err)
        else:
            path = out / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", newline="") as fh:
                fh.write(format_run_csv(rec, n_samples))
            snap = save_snapshots(path.with_suffix(".snapshots.npz"), rec)
            entry.update(status="ok", diverged=rec.diverged,
                         divergence_iter=rec.divergence_iter,
                         n_accepted=rec.n_accepted, n_rejected=rec.n_rejected,
                         grad_evals=rec.grad_evals, final_gap=_json_float(rec.final_gap),
                         snapshots=None if snap is None else
                         path.with_suffix(".snapshots.npz").relative_to(out).as_posix())
        runs.append(entry)
    return runs


def _json_float(v):
    return None if v is None or not math.isfinite(v) else float(v)


def _resolved(cfg: OptimizerConfig):
    d = asdict(cfg)
    d.pop("seed")
    return d


def _manifest(spec, problem, runs, resolved, kind, extra=None):
    m = {
        "kind": kind,
        "name": spec.name,
        "library_version": __version__,
        "spec": spec.to_dict(),
        "problem_fingerprint": problem.fingerprint(),
        "problem": {"dim": problem.dim, "smoothness": problem.smoothness,
                    "optimal_value": _json_float(problem.optimal_value()),
                    "n_samples": getattr(problem, "n_samples", None)},
        "resolved_optimizers": resolved,
        "runs": runs,
    }
    if extra:
        m.update(extra)
    return m


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")


def _prepare(spec, out, base_dir):
    spec.validate()
    out = Path(out if out is not None else (spec.out or "runs"))
    _check_writable(out)
    problem = build_problem(spec.problem, base_dir=base_dir)
    problem.optimal_value()  # reference solve once, before fan-out
    x0 = starting_point(problem, spec.problem)
    return out, problem, x0


def run_experiment(spec: ExperimentSpec, out=None, jobs=None, base_dir=None):
    """Run every (optimizer, seed) cell; returns the manifest dict.

    Writes ``runs/<config>/seed_<n>.csv``, ``summary/<config>.csv`` and
    ``manifest.json`` under the output directory.
    """
    out, problem, x0 = _prepare(spec, out, base_dir)
    L = problem.smoothness
    cells, resolved = [], {}
    for opt in spec.optimizers:
        name = opt["name"]
        for seed in spec.seeds:
            cfg = build_config(opt, L, seed, spec.stride, spec.record_wall_time)
            cells.append(dict(problem=problem, config=cfg, x0=x0, name=name, seed=seed,
                              dir=name))
        resolved[name] = _resolved(cfg)
    runs = _run_cells(out, cells, problem, jobs)
    summaries = {}
    for name in resolved:
        files = [out / r["file"] for r in runs if r["config"] == name and r["status"] == "ok"]
        if files:
            table = summarize(files)
            rel = Path("summary") / f"{name}.csv"
            write_summary(out / rel, table)
            summaries[name] = rel.as_posix()
    manifest = _manifest(spec, problem, runs, resolved, "run", {"summaries": summaries})
    _write_json(out / "manifest.json", manifest)
    return manifest


def sweep_step_sizes(spec: ExperimentSpec, etas, out=None, jobs=None, base_dir=None):
    """Re-run every optimizer at each step size; returns the manifest dict.

    Diverged cells are reported in ``stability.csv``; they never abort the
    sweep.
    """
    if len(etas) < 2:
        raise HarnessError("a sweep needs at least two step sizes")
    out, problem, x0 = _prepare(spec, out, base_dir)
    L = problem.smoothness
    cells, resolved = [], {}
    for opt in spec.optimizers:
        for eta_token in etas:
            eta = resolve_value(eta_token, L)
            label = f"{opt['name']}@eta={eta_token}"
            edir = f"{opt['name']}/eta_{_safe(eta_token)}"
            for seed in spec.seeds:
                cfg = build_config({**opt, "eta": eta}, L, seed, spec.stride,
                                   spec.record_wall_time)
                cells.append(dict(problem=problem, config=cfg, x0=x0, name=opt["name"],
                                  seed=seed, dir=edir, eta=str(eta_token)))
            resolved[label] = _resolved(cfg)
    runs = _run_cells(out, cells, problem, jobs)

    report = []
    summaries = {}
    for opt in spec.optimizers:
        for eta_token in etas:
            cell_runs = [r for r in runs if r["config"] == opt["name"]
                         and r["eta"] == str(eta_token)]
            ok = [r for r in cell_runs if r["status"] == "ok"]
            n_div = sum(1 for r in ok if r["diverged"]) + (len(cell_runs) - len(ok))
            finals = [r["final_gap"] for r in ok if not r["diverged"]
                      and r["final_gap"] is not None]
            report.append({"config": opt["name"], "eta": str(eta_token),
                           "n_seeds": len(cell_runs), "n_diverged": n_div,
                           "stable": n_div == 0,
                           "median_final_gap": float(np.median(finals)) if finals else None})
            if ok:
                rel = Path("summary") / opt["name"] / f"eta_{_safe(eta_token)}.csv"
                write_summary(out / rel, summarize([out / r["file"] for r in ok]))
                summaries[f"{opt['name']}@eta={eta_token}"] = rel.as_posix()
    with open(out / "stability.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STABILITY_COLUMNS)
        for r in report:
            w.writerow([r["config"], r["eta"], r["n_seeds"], r["n_diverged"],
                        int(r["stable"]), _fmt(r["median_final_gap"])])
    manifest = _manifest(spec, problem, runs, resolved, "sweep",
                         {"etas": [str(e) for e in etas], "stability": report,
                          "summaries": summaries})
    _write_json(out / "manifest.json", manifest)
    return manifest


def _safe(token):
    return re.sub(r"[^A-Za-z0-9.+-]", "_", str(token))


# --------------------------------------------------------------------------
# summaries
# --------------------------------------------------------------------------

@dataclass
class SummaryTable:
    iters: np.ndarray
    epochs: np.ndarray
    quantiles: Dict[float, np.ndarray]
    n_runs: int
    n_diverged: int
    files: List[str] = field(default_factory=list)

    @property
    def median(self):
        return self.quantiles[0.5]

    def rows(self):
        for i in range(len(self.iters)):
            yield (int(self.iters[i]), self.epochs[i],
                   self.quantiles[0.5][i], self.quantiles[0.05][i], self.quantiles[0.25][i],
                   self.quantiles[0.75][i], self.quantiles[0.95][i],
                   self.n_runs, self.n_diverged)


def summarize(run_csvs) -> SummaryTable:
    """Quantile bands (linear interpolation) over non-diverged runs.

    A run counts as diverged when any gap entry is non-finite.
    """
    paths = [Path(p) for p in run_csvs]
    if not paths:
        raise HarnessError("summarize needs at least one run file")
    good, n_div = [], 0
    for p in sorted(paths):
        cols = read_run_csv(p)
        if not np.all(np.isfinite(cols["gap"])):
            n_div += 1
            continue
        good.append((p, cols))
    if not good:
        grid = read_run_csv(sorted(paths)[0])["iter"][:0]
        empty = {q: np.empty(0) for q in QUANTILES}
        return SummaryTable(grid, grid, empty, 0, n_div, [str(p) for p in paths])
    ref_path, ref = good[0]
    for p, cols in good[1:]:
        if cols["iter"].shape != ref["iter"].shape or np.any(cols["iter"] != ref["iter"]):
            raise MisalignedRunsError(f"iteration grids differ: {ref_path} vs {p}")
    G = np.vstack([c["gap"] for _, c in good])
    qs = np.quantile(G, QUANTILES, axis=0)
    return SummaryTable(iters=ref["iter"], epochs=ref["epoch"],
                        quantiles={q: qs[i] for i, q in enumerate(QUANTILES)},
                        n_runs=len(good), n_diverged=n_div,
                        files=[str(p) for p, _ in good])


def write_summary(path, table: SummaryTable):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for values in table.rows():
            w.writerow([_fmt(v) if not (isinstance(v, float) and math.isnan(v)) else ""
                        for v in values])


def summarize_directory(directory):
    """Summaries for every config folder under ``<dir>/runs`` (or ``<dir>``)."""
    directory = Path(directory)
    root = directory / "runs" if (directory / "runs").is_dir() else directory
    groups = {}
    for csv_path in sorted(root.rglob("seed_*.csv")):
        key = csv_path.parent.relative_to(root).as_posix()
        groups.setdefault(key, []).append(csv_path)
    if not groups:
        raise HarnessError(f"no run CSVs found under {root}")
    tables = {}
    for key, files in groups.items():
        table = summarize(files)
        write_summary(directory / "summary" / f"{key}.csv", table)
        tables[key] = table
    return tables


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
