"""Post-hoc checks over recorded runs.

Everything here reads snapshots or run CSVs and returns plain report
objects; nothing writes back into a run directory except the optional
``diagnostics.json`` produced by :func:`diagnose_directory`.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List

import numpy as np

from .curvature import CurvatureConfig, CurvaturePair
from .dense import log_det_bound, trace_bound
from .linalg import NotPositiveDefiniteError, cholesky, logdet
from .optimizer import RunRecord, Snapshot, preconditioned_psi

#: relative slack granted to floating-point roundoff in bound comparisons
BOUND_RTOL = 1e-10


class DiagnosticError(RuntimeError):
    pass


@dataclass
class Violation:
    iter: int
    check: str
    value: float
    bound: float


@dataclass
class BoundsReport:
    checked: int = 0
    violations: List[Violation] = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def to_dict(self):
        return {"checked": self.checked, "n_violations": len(self.violations),
                "violations": [asdict(v) for v in self.violations]}


@dataclass
class Envelope:
    lower: float
    upper: float


@dataclass
class PsiTrend:
    early_iter: int
    late_iter: int
    early_median: float
    late_median: float
    n_runs: int

    @property
    def decreasing(self):
        return self.late_median < self.early_median


def _snapshots_of(run):
    snaps = run.snapshots if isinstance(run, RunRecord) else run
    if not snaps:
        raise DiagnosticError("no preconditioner snapshots recorded for this run")
    return snaps


def load_snapshots(path) -> List[Snapshot]:
    """Inverse of the harness snapshot writer."""
    with np.load(path) as z:
        out = []
        for i in range(z["iters"].shape[0]):
            s, y, p = z["s"][i], z["y"][i], float(z["p"][i])
            pair = None if np.isnan(p) else CurvaturePair(s=s.copy(), y=y.copy(), p=p)
            out.append(Snapshot(iter=int(z["iters"][i]), H_before=z["H_before"][i],
                                H_after=z["H_after"][i], pair=pair,
                                accepted=bool(z["accepted"][i])))
        return out


def check_update(H_before, H_after, pair, rho, curvature: CurvatureConfig, k=0):
    """Violations of positivity, the trace bound and the determinant bound."""
    found = []
    try:
        cholesky(H_after)
        ld = logdet(H_after)
    except NotPositiveDefiniteError:
        lam = float(np.linalg.eigvalsh(H_after)[0])
        found.append(Violation(k, "positive_definite", lam, 0.0))
        ld = None
    tr = float(np.trace(H_after))
    tb = trace_bound(H_before, pair, rho, curvature.m_lower, curvature.m_upper)
    if tr > tb + BOUND_RTOL * abs(tb):
        found.append(Violation(k, "trace", tr, tb))
    ldb = log_det_bound(H_before, pair, rho)
    if ld is None or not ld > ldb - BOUND_RTOL * max(1.0, abs(ldb)):
        found.append(Violation(k, "log_det", float("nan") if ld is None else ld, ldb))
    return found


def verify_bounds_trace(run, rho, curvature: CurvatureConfig) -> BoundsReport:
    """Check every accepted snapshot against the trace and determinant bounds."""
    report = BoundsReport()
    for snap in _snapshots_of(run):
        if not snap.accepted or snap.pair is None:
            continue
        report.checked += 1
        report.violations.extend(check_update(snap.H_before, snap.H_after, snap.pair,
                                              rho, curvature, snap.iter))
    return report


def eigen_envelope(run, H0=None, strict=True) -> Envelope:
    """Extremes of the eigenvalue trajectory over ``H0`` and every snapshot.

    With ``strict`` a non-positive lower envelope raises.
    """
    snaps = _snapshots_of(run)
    if H0 is None and isinstance(run, RunRecord):
        H0 = run.H0
    mats = ([] if H0 is None else [H0]) + [s.H_after for s in snaps]
    lo, hi = math.inf, -math.inf
    for M in mats:
        w = np.linalg.eigvalsh(M)
        lo, hi = min(lo, float(w[0])), max(hi, float(w[-1]))
    if strict and not lo > 0:
        raise DiagnosticError(f"lower eigenvalue envelope {lo} is not positive")
    return Envelope(lo, hi)


def trace_budget(run, rho, curvature: CurvatureConfig, H0=None):
    """``tr(H0) + sum_k (trace_bound_k - tr(H_k))`` over accepted updates.

    Telescoping the per-update trace bound gives an upper bound on every
    ``tr(H_k)``, hence on the upper eigenvalue envelope. Needs a snapshot at
    every iteration.
    """
    snaps = _snapshots_of(run)
    if H0 is None and isinstance(run, RunRecord):
        H0 = run.H0
    if H0 is None:
        raise DiagnosticError("H0 is required")
    iters = [s.iter for s in snaps]
    if iters != list(range(1, len(snaps) + 1)):
        raise DiagnosticError("trace budget needs snapshots at every iteration")
    total = float(np.trace(H0))
    for snap in snaps:
        if snap.accepted:
            total += trace_bound(snap.H_before, snap.pair, rho, curvature.m_lower,
                                 curvature.m_upper) - float(np.trace(snap.H_before))
    return total


def psi_value(H, A):
    """``tr(HA) - log det(HA)`` through the SPD form ``L' H L``."""
    return preconditioned_psi(H, cholesky(A))


def _psi_series(run):
    if isinstance(run, RunRecord):
        return np.array([r.iter for r in run.rows]), run.column("psi")
    from .harness import read_run_csv

    cols = read_run_csv(run)
    return cols["iter"], cols["psi"]


def psi_trend(runs, early_iter=10, late_iter=None, problem=None) -> PsiTrend:
    """Median Psi at an early and a late recorded iteration across runs.

    ``runs`` holds :class:`RunRecord` objects or run CSV paths. Defaults to
    the last recorded iteration for ``late_iter``.
    """
    if problem is not None and problem.hessian() is None:
        raise DiagnosticError("Psi trend needs a problem with a constant Hessian")
    early, late = [], []
    late_used = late_iter
    for run in runs:
        iters, psi = _psi_series(run)
        if not np.any(np.isfinite(psi)):
            raise DiagnosticError("no Psi values recorded; a quadratic problem and a "
                                  "dense preconditioner are required")
        k_late = int(iters[-1]) if late_iter is None else late_iter
        late_used = k_late if late_used is None else late_used
        for k, bucket in ((early_iter, early), (k_late, late)):
            idx = np.flatnonzero(iters == k)
            if idx.size == 0:
                raise DiagnosticError(f"iteration {k} was not recorded")
            bucket.append(psi[idx[0]])
    if not early:
        raise DiagnosticError("no runs given")
    early, late = np.array(early), np.array(late)
    keep = np.isfinite(early) & np.isfinite(late)
    if not keep.any():
        raise DiagnosticError("every run lacks Psi at the requested iterations")
    return PsiTrend(early_iter, late_used, float(np.median(early[keep])),
                    float(np.median(late[keep])), int(keep.sum()))


def write_report(path, report):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")


def diagnose_directory(directory, out_name="diagnostics.json"):
    """Bound checks, envelopes and Psi trends for a harness output directory."""
    from .harness import build_config, read_run_csv

    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise DiagnosticError(f"{manifest_path} not found")
    manifest = json.loads(manifest_path.read_text())
    L = manifest["problem"]["smoothness"]
    opts = {o["name"]: o for o in manifest["spec"]["optimizers"]}
    report = {"runs": [], "psi_trend": {}}
    by_config = {}
    for entry in manifest["runs"]:
        if entry.get("status") != "ok":
            continue
        by_config.setdefault(entry["config"], []).append(directory / entry["file"])
        opt = opts[entry["config"]]
        if entry.get("snapshots") is None or opt.get("kind") != "sbfgs-dense":
            continue
        cfg = build_config({**opt, **({"eta": entry["eta"]} if "eta" in entry else {})},
                           L, entry["seed"], manifest["spec"]["stride"])
        snaps = load_snapshots(directory / entry["snapshots"])
        bounds = verify_bounds_trace(snaps, cfg.rho, cfg.curvature)
        env = eigen_envelope(snaps, strict=False)
        report["runs"].append({"config": entry["config"], "seed": entry["seed"],
                               "eta": entry.get("eta"), "bounds": bounds.to_dict(),
                               "envelope": asdict(env), "lower_positive": env.lower > 0})
    for name, files in by_config.items():
        stable = [f for f in files if np.all(np.isfinite(read_run_csv(f)["gap"]))]
        try:
            trend = psi_trend(stable)
        except DiagnosticError:
            continue
        report["psi_trend"][name] = {**asdict(trend), "decreasing": trend.decreasing}
    write_report(directory / out_name, report)
    return report
