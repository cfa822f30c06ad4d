"""Command line driver.

    magstep <band|invariants|quasimode|solve2d|fit|diagnostics|verify>
            --config <path> [--output <dir>] [--jobs N]

Exit codes: 0 success, 1 failing verify check, 2 invalid input, 3 solver failure.
"""
import argparse
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from ._validation import COMMANDS, RunConfig, load_config
from .errors import SolverError, ValidationError

log = logging.getLogger("magstep")

CSV_SCHEMA = "magstep-csv v1"
EXIT_OK, EXIT_CHECK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2, 3


def _pmap(fn, items, jobs):
    """Map preserving input order on a bounded thread pool."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _grid(cfg: RunConfig):
    from .fiber import Grid1D
    return Grid1D(cfg.L, cfg.n)


def _invariants(cfg: RunConfig, a=None):
    from .invariants import compute_invariants
    return compute_invariants(cfg.a if a is None else a, _grid(cfg), cache=True,
                              cache_dir=cfg.cache_dir)


def _profile(cfg: RunConfig):
    from .edge2d import CurvatureProfile
    p = cfg.profile
    return CurvatureProfile(p["kind"], p["k_max"], p["k2"])


# -- commands ---------------------------------------------------------------------

def cmd_band(cfg: RunConfig, out: Path, jobs: int):
    from .fiber import band_sweep
    pts = band_sweep(cfg.a, cfg.xi_min, cfg.xi_max, cfg.n_xi, _grid(cfg), jobs=jobs)
    io.write_csv(out / "band.csv", ["xi", "mu", "mu_prime"],
                 [(p.xi, p.mu, p.mu_prime) for p in pts], schema=CSV_SCHEMA)
    return EXIT_OK


def cmd_invariants(cfg: RunConfig, out: Path, jobs: int):
    from .invariants import _to_dict
    inv = _invariants(cfg)
    io.write_json(out / "invariants.json", _to_dict(inv, nested=False))
    return EXIT_OK


def cmd_quasimode(cfg: RunConfig, out: Path, jobs: int):
    from .quasimode import (apply_Pnew_truncated, build_expansion, hierarchy_residuals,
                            solvability_defect)
    inv = _invariants(cfg)
    prof = _profile(cfg)
    ex = build_expansion(inv, prof.k_max, prof.k2, cfg.qm_mode)
    hs = cfg.h_list
    res = _pmap(lambda h: apply_Pnew_truncated(h, ex, cutoff=cfg.qm_cutoff), hs, jobs)
    wres = _pmap(lambda h: apply_Pnew_truncated(h, ex, cutoff=cfg.qm_cutoff, weighted=True), hs, jobs)
    io.write_csv(out / "quasimode_residuals.csv", ["h", "residual", "residual_weighted", "mu_h"],
                 [(h, r, w, ex.mu_total(h)) for h, r, w in zip(hs, res, wres)], schema=CSV_SCHEMA)
    summary = {"mode": cfg.qm_mode, "mu": list(map(float, ex.mu)),
               "hierarchy": hierarchy_residuals(ex), "solvability_defect": solvability_defect(ex)}
    if len(hs) >= 2:
        summary["residual_slope"] = float(np.polyfit(np.log(hs), np.log(res), 1)[0])
        summary["residual_weighted_slope"] = float(np.polyfit(np.log(hs), np.log(wres), 1)[0])
    io.write_json(out / "quasimode.json", summary)
    return EXIT_OK


def _domain_for(cfg: RunConfig, h):
    from .edge2d import EdgeDomain
    d = cfg.domain
    if "n_s" in d:
        return EdgeDomain(d.get("S", 16.0), d["T"], d["n_s"], d["n_t"], d.get("t_minus"))
    kw = {k: d[k] for k in ("S", "ds_scale", "dtau", "t_plus", "minus_widths") if k in d}
    return EdgeDomain.for_h(h, **kw)


def _solve_all(cfg: RunConfig, k: int, jobs: int):
    from .edge2d import assemble_operator2d, check_edge_localized, predicted_lambda, solve_eigs2d
    inv = _invariants(cfg)
    prof = _profile(cfg)

    def one(h):
        dom = _domain_for(cfg, h)
        op = assemble_operator2d(h, cfg.a, prof, dom, momentum=inv.zeta_a, scheme=cfg.scheme)
        shift = 0.98 * min(predicted_lambda(h, inv, prof), h * inv.beta_a)
        return check_edge_localized(solve_eigs2d(op, k, tol=cfg.eig2d_tol, shift=shift))

    return inv, prof, _pmap(one, cfg.h_list, jobs)


def _stable_stats(stats):
    return {k: v for k, v in stats.items() if k != "seconds"}


def cmd_solve2d(cfg: RunConfig, out: Path, jobs: int):
    from .edge2d import dump_grid, matched_fiber_beta
    inv, prof, results = _solve_all(cfg, cfg.n_modes, jobs)
    rows, docs = [], []
    for r in results:
        mb = matched_fiber_beta(r.domain, r.h, cfg.a, inv.zeta_a)
        log.info("h=%g solved in %.2f s (%d sweeps)", r.h, r.stats["seconds"], r.stats["iterations"])
        for n, lam in enumerate(r.lambdas):
            rows.append((r.h, n + 1, float(lam), float(lam / r.h), r.stats["residuals"][n],
                         r.stats["iterations"], r.domain.n_s, r.domain.n_t, mb))
        doc = r.to_json()
        doc["stats"] = _stable_stats(doc["stats"])
        doc["matched_beta"] = mb
        docs.append(doc)
        if cfg.dump_grids:
            for n, u in enumerate(r.eigvecs):
                dump_grid(out / "grids" / f"u_h{r.h:g}_n{n + 1}.bin", u, r.h)
    io.write_csv(out / "eigs2d.csv",
                 ["h", "n", "lambda", "lambda_over_h", "residual", "iterations", "n_s", "n_t",
                  "matched_beta"], rows, schema=CSV_SCHEMA)
    io.write_json(out / "eigs2d.json", {"a": cfg.a, "profile": cfg.profile, "results": docs})
    return EXIT_OK


def _read_eigs_csv(path):
    import csv
    try:
        with open(path) as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
    except OSError as e:
        raise ValidationError(f"cannot read fit source {path}: {e.strerror}") from None
    rows = list(csv.DictReader(lines))
    by_h = {}
    for r in rows:
        h = float(r["h"])
        by_h.setdefault(h, {"beta": float(r["matched_beta"]), "lams": {}})
        by_h[h]["lams"][int(r["n"])] = float(r["lambda"])
    hs = sorted(by_h, reverse=True)
    k = min(len(by_h[h]["lams"]) for h in hs)
    lams = [[by_h[h]["lams"][n] for n in range(1, k + 1)] for h in hs]
    return hs, lams, [by_h[h]["beta"] for h in hs]


def cmd_fit(cfg: RunConfig, out: Path, jobs: int):
    from .edge2d import fit_asymptotics
    f = cfg.fit
    if "lambdas" in f:
        rep = fit_asymptotics(cfg.h_list, f["lambdas"], f["beta"], f["kM3"], f["E1"])
    else:
        src = Path(f.get("source", out / "eigs2d.csv"))
        hs, lams, betas = _read_eigs_csv(src)
        inv = _invariants(cfg)
        prof = _profile(cfg)
        E1 = float(np.sqrt(prof.k2 * inv.M3 * inv.c2 / 2))
        beta = betas if cfg.matched_beta else inv.beta_a
        rep = fit_asymptotics(hs, lams, beta, prof.k_max * inv.M3, E1, 2 * E1, beta_ref=inv.beta_a)
    io.write_json(out / "fit_report.json", rep.to_json())
    return EXIT_OK


def cmd_diagnostics(cfg: RunConfig, out: Path, jobs: int):
    from .edge2d import localization_diagnostics
    inv, prof, results = _solve_all(cfg, 1, jobs)
    diags = [localization_diagnostics(r, inv) for r in results]
    keys = list(diags[0])
    io.write_csv(out / "diagnostics.csv", keys, [[d[k] for k in keys] for d in diags],
                 schema=CSV_SCHEMA)
    return EXIT_OK


def cmd_verify(cfg: RunConfig, out: Path, jobs: int):
    from .acceptance import Context, run_groups
    ctx = Context(_grid(cfg), cache_dir=cfg.cache_dir, use_cache=True)
    t0 = time.perf_counter()
    results = run_groups(cfg.groups, ctx)
    failing = [f"criterion {r.criterion}: {name}" for r in results for name in r.failing()]
    report = {"groups": cfg.groups, "passed": not failing, "failing": failing,
              "seconds": time.perf_counter() - t0, "checks": [r.to_json() for r in results]}
    io.write_json(out / "verify.json", report)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} criterion {r.criterion}: {r.title}")
        for it in r.items:
            print(f"    {'ok ' if it.passed else 'BAD'} {it.name} = {it.value:.6g} ({it.tolerance})")
    if failing:
        print("failing checks: " + "; ".join(failing), file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


HANDLERS = {"band": cmd_band, "invariants": cmd_invariants, "quasimode": cmd_quasimode,
            "solve2d": cmd_solve2d, "fit": cmd_fit, "diagnostics": cmd_diagnostics,
            "verify": cmd_verify}


def build_parser():
    ap = argparse.ArgumentParser(prog="magstep", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--output", help="output directory (overrides output_dir)")
    ap.add_argument("--jobs", type=int, default=1, help="worker threads for independent jobs")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        cfg = load_config(args.config, args.command)
        out = Path(args.output or cfg.output_dir or "magstep_out")
        out.mkdir(parents=True, exist_ok=True)
        handler = logging.FileHandler(out / "run.log")
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
        log.addHandler(handler)
        log.setLevel(logging.INFO)
        try:
            t0 = time.perf_counter()
            code = HANDLERS[args.command](cfg, out, args.jobs)
            log.info("%s finished in %.2f s with exit code %d", args.command,
                     time.perf_counter() - t0, code)
        finally:
            log.removeHandler(handler)
            handler.close()
        return code
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except SolverError as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
