"""Experiment runner: executes a validated config, writes a result bundle.

A bundle is a directory with results.json (all numbers tagged exact or with a
standard error), one CSV per table, and one SVG per curve.  Everything except
the "timing" block of results.json is a pure function of (config, seed).
"""

from __future__ import annotations

import csv
import json
import subprocess
import time
from pathlib import Path

import numpy as np

from . import __version__, markov, mixing, stats, svgplot
from ._kernels import BACKEND
from .config import ExperimentConfig
from .stats import RngSpec


class MissingBundle(FileNotFoundError):
    pass


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=10,
            cwd=Path(__file__).parent,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except (OSError, subprocess.TimeoutExpired):
        pass
    return "unknown"


def _estimate(e: stats.EstimateWithCI) -> dict:
    return e.as_dict()


def _exact(value) -> dict:
    return {"value": value, "exact": True}


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def _sigma_for(cfg: ExperimentConfig, rng: RngSpec):
    """Covariance used by LLT/mixing targets.

    One-state oracles have an exact jump covariance (no time correlations);
    everything else is estimated from S_n / sqrt(n) over fresh samples.
    """
    sys = cfg.system
    if isinstance(sys, markov.MarkovExtension) and sys.n_states == 1:
        _, cov = markov.jump_moments(sys)
        return stats.CovarianceMatrix(matrix=cov), True
    n_sigma = int(cfg.params.get("n_sigma", 100))
    n_samples = int(cfg.params.get("N_sigma", 100_000))
    return stats.estimate_sigma(sys, n_sigma, n_samples, rng), False


def _run_validate(cfg, rng, outdir):
    table = cfg.table
    if table is None:
        sys = cfg.system
        return {
            "results": {
                "kind": "markov",
                "n_states": sys.n_states,
                "lattice_period": sys.lattice_period,
                "stationary": list(map(float, sys.pi)),
            },
            "verdicts": {"validated": True},
        }
    return {
        "results": {
            "kind": "billiard",
            "horizon_bound": _exact(table.horizon_bound),
            "corridor_scan_complete": table.corridor_complete,
            "mean_flight_sampled": table.mean_flight_sampled,
            "mean_free_path_santalo": table.mean_free_path,
            "psi_set": sorted(map(list, table.psi_set)),
        },
        "verdicts": {"validated": bool(table.validated)},
    }


def _run_sigma(cfg, rng, outdir):
    sigma, exact = _sigma_for(cfg, rng)
    rows = [
        ["entry", "value", "stderr"],
    ]
    out = {
        "matrix": [[sigma.matrix[i, j] for j in range(2)] for i in range(2)],
        "stderr": None
        if sigma.stderr is None
        else [[float(sigma.stderr[i, j]) for j in range(2)] for i in range(2)],
        "exact": exact,
        "det": sigma.det,
        "llt_constant": stats.llt_constant(sigma, cfg.system.lattice_period),
    }
    body = []
    for i in range(2):
        for j in range(2):
            se = 0.0 if sigma.stderr is None else float(sigma.stderr[i, j])
            body.append([f"sigma_{i}{j}", f"{sigma.matrix[i, j]:.8g}", f"{se:.3g}"])
    _write_csv(outdir / "sigma.csv", rows[0], body)
    return {"results": out, "verdicts": {"positive_definite": True}}


def _run_llt(cfg, rng, outdir):
    sys = cfg.system
    n_grid = [int(n) for n in cfg.params.get("n_grid", [50, 100, 200])]
    cells = [tuple(c) for c in cfg.params.get("cells", [[0, 0]])]
    exact = bool(
        cfg.params.get("exact", isinstance(sys, markov.MarkovExtension))
    )
    sigma, sigma_exact = _sigma_for(cfg, rng.child(1))
    ratio_tol = cfg.params.get("ratio_tol")
    rows = stats.llt_report(
        sys,
        n_grid,
        cells,
        int(cfg.params.get("N", 100_000)),
        sigma,
        rng=rng.child(2),
        exact=exact,
        ratio_tol=ratio_tol,
    )
    _write_csv(outdir / "llt.csv", stats.LLT_CSV_HEADER, [r.as_csv_row() for r in rows])
    by_n = {}
    for r in rows:
        by_n.setdefault(r.cell, ([], []))
        by_n[r.cell][0].append(r.n)
        by_n[r.cell][1].append(r.ratio)
    svg = svgplot.line_plot(
        {f"cell {c}": xy for c, xy in by_n.items()},
        "local limit ratio",
        "n",
        "n p / target",
        log_x=True,
    )
    (outdir / "llt_ratio.svg").write_text(svg)
    hard_fail = [
        r
        for r in rows
        if (r.exact and ratio_tol is not None and abs(r.ratio - 1) > ratio_tol)
        or (not r.exact and abs(r.n_phat - r.phi_b) > stats.HARD_SIGMAS * r.n * r.stderr)
    ]
    return {
        "results": {
            "sigma_exact": sigma_exact,
            "lattice_period": sys.lattice_period,
            "rows": [
                {
                    "n": r.n,
                    "cell": list(r.cell),
                    "n_phat": r.n_phat,
                    "target": r.phi_b,
                    "ratio": r.ratio,
                    "stderr": r.stderr,
                    "exact": r.exact,
                    "flag": r.flag,
                }
                for r in rows
            ],
        },
        "verdicts": {"llt_hard": not hard_fail},
    }


def _run_mixing(cfg, rng, outdir):
    sys = cfg.system
    obs = cfg.observables
    pairs = cfg.params.get("pairs")
    if pairs is None:
        names = list(obs)
        if len(names) == 1:
            pairs = [[names[0], names[0]]]
        elif len(names) == 2:
            pairs = [[names[0], names[1]]]
        else:
            raise ValueError("params.pairs required with 3+ observables")
    sigma, _ = _sigma_for(cfg, rng.child(1))
    n_grid = [int(n) for n in cfg.params.get("n_grid", [50, 100, 200])]
    n_samples = int(cfg.params.get("N", 100_000))
    verdicts = {}
    results = {}
    series = {}
    for i, (un, vn) in enumerate(pairs):
        rep = mixing.mixing_rate_report(
            obs[un], obs[vn], sys, n_grid, n_samples, sigma, rng.child(10 + i)
        )
        tag = f"{un}_{vn}"
        _write_csv(
            outdir / f"mixing_{tag}.csv",
            mixing.MIXING_CSV_HEADER,
            [r.as_csv_row() for r in rep.rows],
        )
        series[tag] = ([r.n for r in rep.rows], [r.n_I_hat for r in rep.rows])
        series[f"{tag} target"] = (
            [r.n for r in rep.rows],
            [r.target for r in rep.rows],
        )
        verdicts[f"mixing_{tag}"] = rep.verdict
        results[tag] = {
            "phi_b0": rep.phi_b0,
            "integral_u": rep.integral_u,
            "integral_v": rep.integral_v,
            "trunc_bound": rep.trunc_bound,
            "excluded": rep.excluded,
            "rows": [
                {
                    "n": r.n,
                    "I_hat": _estimate(r.I_hat),
                    "target": r.target,
                    "target_err": r.target_err,
                    "n_I_hat": r.n_I_hat,
                    "verdict": r.verdict,
                }
                for r in rep.rows
            ],
        }
    svg = svgplot.line_plot(series, "mixing rate", "n", "n * I_n", log_x=True)
    (outdir / "mixing.svg").write_text(svg)
    return {"results": results, "verdicts": verdicts}


def _run_tail(cfg, rng, outdir):
    sys = cfg.system
    cap = int(cfg.params.get("cap", 512))
    n_samples = int(cfg.params.get("N", 100_000))
    curve = mixing.return_tail_empirical(sys, cap, n_samples, rng.child(3))
    rows = [
        [int(n), f"{s:.8g}", f"{e:.3g}"]
        for n, s, e in zip(curve.n, curve.survival, curve.stderr)
    ]
    _write_csv(outdir / "tail.csv", ["n", "survival", "stderr"], rows)
    svg = svgplot.line_plot(
        {"P(phi > n)": (list(curve.n[1:].astype(float)), list(curve.survival[1:]))},
        "first-return survival",
        "n",
        "P(phi > n)",
        log_x=True,
    )
    (outdir / "tail.svg").write_text(svg)
    results = {
        "cap": cap,
        "censored": curve.censored,
        "n_samples": curve.n_samples,
        "survival_tail": curve.survival[-1],
        "mass_identity": curve.check_mass_identity(),
    }
    if isinstance(sys, markov.MarkovExtension):
        n_exact = min(cap, int(cfg.params.get("n_max", 200)))
        exact = markov.exact_return_tail(sys, n_exact)
        results["exact_tail"] = {
            "n_max": n_exact,
            "consistency_residual": exact.consistency_residual,
            "tail": [float(x) for x in exact.tail[: min(n_exact, 50) + 1]],
        }
    return {
        "results": results,
        "verdicts": {"mass_identity": bool(curve.check_mass_identity())},
    }


def _run_oracle_identities(cfg, rng, outdir):
    sys = cfg.system
    if not isinstance(sys, markov.MarkovExtension):
        raise ValueError("oracle-identities runs on Markov systems only")
    n_max = int(cfg.params.get("n_max", 50))
    _, _, tr_resid = markov.operator_TR(sys, n_max)
    u_resid = markov.operator_U_check(sys, n_max)
    tail = markov.exact_return_tail(sys, n_max)
    results = {
        "n_max": n_max,
        "renewal_TR_residual": _exact(tr_resid),
        "renewal_U_residual": _exact(u_resid),
        "tail_consistency_residual": _exact(tail.consistency_residual),
        "lattice_period": sys.lattice_period,
    }
    ok = max(tr_resid, u_resid, tail.consistency_residual) <= markov.IDENTITY_TOL
    return {"results": results, "verdicts": {"identities_1e-12": bool(ok)}}


def _run_prop_scan(cfg, rng, outdir):
    sys = cfg.system
    k = int(cfg.params.get("k", 1))
    n_grid = [int(n) for n in cfg.params.get("n_grid", [64, 128, 256, 512])]
    cell = tuple(cfg.params.get("cells", [[0, 0]])[0])
    from .observables import local_preset

    u_loc = cfg.observables["u"].local if "u" in cfg.observables else local_preset("constant")
    v_loc = cfg.observables["v"].local if "v" in cfg.observables else local_preset("constant")
    if isinstance(sys, markov.MarkovExtension):
        sigma, _ = _sigma_for(cfg, rng.child(1))
        scan = mixing.exact_prop_scan(sys, u_loc, v_loc, k, n_grid, cell, sigma)
    else:
        sigma, _ = _sigma_for(cfg, rng.child(1))
        scan = mixing.prop_error_scan(
            sys, u_loc, v_loc, k, n_grid, cell,
            int(cfg.params.get("N", 100_000)), sigma, rng.child(4),
        )
    _write_csv(
        outdir / "scan.csv",
        ["n", "residual", "scaled", "ci"],
        [[r.n, f"{r.residual:.8g}", f"{r.scaled:.8g}", f"{r.ci:.3g}"] for r in scan.rows],
    )
    svg = svgplot.line_plot(
        {"scaled residual": ([r.n for r in scan.rows], [r.scaled for r in scan.rows])},
        "quantitative error scan",
        "n",
        "residual * (n-2k)^{3/2}",
        log_x=True,
    )
    (outdir / "scan.svg").write_text(svg)
    return {
        "results": {
            "k": k,
            "cell": list(cell),
            "verdict": scan.verdict,
            "rows": [
                {"n": r.n, "residual": r.residual, "scaled": r.scaled, "ci": r.ci}
                for r in scan.rows
            ],
        },
        "verdicts": {"scan_not_unbounded": scan.verdict != "UNBOUNDED"},
    }


_RUNNERS = {
    "validate": _run_validate,
    "sigma": _run_sigma,
    "llt": _run_llt,
    "mixing": _run_mixing,
    "tail": _run_tail,
    "oracle-identities": _run_oracle_identities,
    "prop-scan": _run_prop_scan,
}


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> dict:
    """Execute the configured experiment; returns the bundle dict.

    Writes results.json plus CSV/SVG artifacts into the output directory.
    The exit status is bundle["pass"].
    """
    outdir = Path(out_dir or cfg.output or "runs/latest")
    outdir.mkdir(parents=True, exist_ok=True)
    rng = RngSpec(cfg.seed)
    started = time.time()
    try:
        body = _RUNNERS[cfg.experiment](cfg, rng, outdir)
    except Exception as e:
        record = {
            "experiment": cfg.experiment,
            "config": cfg.raw,
            "error": {"type": type(e).__name__, "message": str(e)},
            "pass": False,
        }
        (outdir / "results.json").write_text(
            json.dumps(record, indent=2, sort_keys=True, default=float) + "\n"
        )
        raise
    bundle = {
        "experiment": cfg.experiment,
        "config": cfg.raw,
        "build": {"git": _git_describe(), "version": __version__, "backend": BACKEND},
        "results": body["results"],
        "verdicts": body["verdicts"],
        "pass": all(body["verdicts"].values()),
        "timing": {
            "started_unix": started,
            "duration_s": time.time() - started,
            "workers_hint": cfg.workers,
        },
    }
    (outdir / "results.json").write_text(
        json.dumps(bundle, indent=2, sort_keys=True, default=float) + "\n"
    )
    return bundle


def emit_report(bundle_dir: str | Path) -> int:
    """Print the verdict table of an existing bundle; never recomputes."""
    path = Path(bundle_dir) / "results.json"
    if not path.exists():
        raise MissingBundle(f"no results.json under {bundle_dir}")
    bundle = json.loads(path.read_text())
    print(f"experiment: {bundle['experiment']}  backend: {bundle['build']['backend']}")
    for name, ok in sorted(bundle["verdicts"].items()):
        print(f"  {'PASS' if ok else 'FAIL'}  {name}")
    print(f"{'PASS' if bundle['pass'] else 'FAIL'}  overall")
    return 0 if bundle["pass"] else 1
