"""
Command-line front end.

    chiral-rabi [--config FILE] <model> <action> [flags]

Models and actions: ``single eig|dynamics|sweep``, ``vlevel eig``,
``lattice ground|quench``, ``rwa bound|oracle`` and ``selftest``.  Every run
writes CSV tables plus ``manifest.json`` into the output directory (flag
``--out``, config ``[run] output_dir``, or the ``CHIRAL_RABI_OUTPUT_DIR``
environment variable).
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import metadata
from typing import Callable, Optional

import numpy as np

from .config import ACTIONS, ConfigError, Grid, RunConfig, build_config, parse_config_text
from .hilbert import E, BasisTooLargeError, ModelParams
from .numerics import SolverError
from .tables import Manifest, SweepTable, config_hash, write_tables

log = logging.getLogger("chiral_rabi")

# defaults per (model, action); config files and flags override them
DEFAULTS = {
    ("single", "eig"): {"g_grid": Grid("0:3:0.02"), "sectors": (0, 1), "levels": 6},
    ("single", "dynamics"): {"params.g": 2.0, "time_grid": Grid("0:4:0.005"), "time_unit": "gt_2pi"},
    ("single", "sweep"): {"g_grid": Grid("1:3:0.5"), "time_grid": Grid("0:4:0.005"), "time_unit": "gt_2pi"},
    ("vlevel", "eig"): {"g_grid": Grid("0:3:0.02"), "sectors": (-1, 0, 1), "levels": 6},
    ("lattice", "ground"): {"g_grid": Grid("0:1.2:0.01"), "params.J": 0.2, "params.L": 20, "n_max": 2, "sectors": (0, 1)},
    ("lattice", "quench"): {"params.g": 1.0, "params.J": 0.2, "params.L": 20, "n_max": 2,
                            "time_grid": Grid("0:30:0.05"), "time_unit": "gt", "krylov_tol": 1e-8},
    ("rwa", "bound"): {"g_grid": Grid("0:1.2:0.01"), "params.J": 0.2},
    ("rwa", "oracle"): {"params.g": 0.4, "params.J": 0.2, "params.L": 400},
    ("selftest", "run"): {},
}


def code_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:  # pragma: no cover - source checkout without install
        return "0+unknown"


def _times_omega0(cfg: RunConfig, g: float) -> tuple[np.ndarray, np.ndarray]:
    """Return (omega0*t, g*t) for the configured time grid."""
    x = cfg.time_grid.values
    w0 = cfg.params.omega0
    if cfg.time_unit == "omega0_t":
        t = x / w0
    else:
        if g == 0:
            raise ConfigError(f"time_unit {cfg.time_unit!r} needs g > 0")
        t = x / g if cfg.time_unit == "gt" else 2 * np.pi * x / g
    return w0 * t, g * t


def _g_values(cfg: RunConfig) -> np.ndarray:
    return cfg.g_grid.values if cfg.g_grid is not None else np.array([cfg.params.g])


def _map(fn: Callable, items, workers: int) -> list:
    """Ordered map; results do not depend on the number of workers."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# single cavity
# ---------------------------------------------------------------------------

_OBS_COLUMNS = ["pop_e", "sigma_z", "n_a", "n_b", "m_ab_re", "m_ab_im", "var_xa", "var_xb", "covar_xx",
                "var_sum", "var_diff", "var_p_sum", "var_p_diff", "entropy", "cumulant3", "lz", "norm"]


def _single_eig_point(args):
    cfg, g = args
    from .single import eigenstate, observables, sector_spectrum

    p = cfg.params.replace(g=float(g))
    energies, obs = [], []
    for l in cfg.sectors:
        sol = sector_spectrum(p, l, n_max=cfg.n_max, k=cfg.levels, tol=cfg.eig_tol)
        for i in range(min(cfg.levels, len(sol.energies))):
            energies.append([float(g), l, i, float(sol.energies[i]), sol.metadata["n_max"], sol.metadata["drift"]])
            rec = observables(eigenstate(sol, i)).as_dict()
            obs.append([float(g), l, i] + [rec[c] for c in _OBS_COLUMNS])
    return {"energies": energies, "observables": obs}


def _cmd_single_eig(cfg, manifest):
    te = SweepTable(["g", "l", "level", "energy", "n_max", "drift"])
    to = SweepTable(["g", "l", "level"] + _OBS_COLUMNS)
    for res in _map(_guarded(_single_eig_point), [(cfg, g) for g in _g_values(cfg)], cfg.workers):
        if "failure" in res:
            manifest.failures.append(res)
            continue
        for r in res["energies"]:
            te.append(r)
        for r in res["observables"]:
            to.append(r)
    return [("single_eig_energies", te), ("single_eig_observables", to)]


def _guarded(fn):
    return _Guarded(fn)


class _Guarded:
    """Picklable wrapper that turns solver errors into failure records."""

    def __init__(self, fn):
        self.fn = fn

    def __call__(self, args):
        try:
            return self.fn(args)
        except (SolverError, BasisTooLargeError, ValueError) as exc:
            return {"failure": f"{type(exc).__name__}: {exc}", "point": repr(args[1:])}


def single_dynamics(params: ModelParams, times, n_max: Optional[int] = None, eig_tol: float = 1e-10,
                    n_max_ceiling: int = 1000):
    """Spectral evolution of |e>|0,0>, growing ``n_max`` until no weight reaches the truncation edge."""
    from .single import TruncationError, sector_spectrum, spectral_evolve

    n = n_max if n_max is not None else sector_spectrum(params, 1, k=10, tol=eig_tol).metadata["n_max"]
    while True:
        try:
            ts = spectral_evolve(params, {(E, 0, 0): 1.0}, times, n_max=n)
            ts.metadata["n_max"] = n
            return ts
        except TruncationError:
            if n >= n_max_ceiling:
                raise
            n = min(n_max_ceiling, int(1.5 * n) + 10)


def conservation_drifts(ts) -> dict:
    e = ts["energy"]
    scale = max(1.0, float(np.abs(e[0])))
    return {
        "norm_drift": float(np.max(np.abs(ts["norm"] - 1.0))),
        "lz_drift": float(np.max(np.abs(ts["lz"] - ts["lz"][0]))),
        "energy_rel_drift": float(np.max(np.abs(e - e[0])) / scale),
    }


def _cmd_single_dynamics(cfg, manifest):
    g = cfg.params.g
    w0t, gt = _times_omega0(cfg, g)
    ts = single_dynamics(cfg.params, w0t / cfg.params.omega0, cfg.n_max, cfg.eig_tol)
    cols = _OBS_COLUMNS + ["energy"]
    table = SweepTable(["omega0_t", "gt"] + cols)
    for i in range(len(w0t)):
        table.append([w0t[i], gt[i]] + [ts[c][i] for c in cols])
    manifest.summary.update(conservation_drifts(ts), n_max=ts.metadata["n_max"])
    return [("single_dynamics", table)]


def _single_sweep_point(args):
    cfg, g = args
    p = cfg.params.replace(g=float(g))
    w0t, gt = _times_omega0(cfg.replace(params=p), float(g))
    ts = single_dynamics(p, w0t / p.omega0, cfg.n_max, cfg.eig_tol)
    photons = ts["n_a"] + ts["n_b"]
    k = int(np.argmax(photons))
    d = conservation_drifts(ts)
    return [float(g), float(photons[k]), float(gt[k]), float(np.mean(ts["sigma_z"])),
            float(np.min(ts["sigma_z"])), float(np.max(ts["sigma_z"][1:])) if len(gt) > 1 else float(ts["sigma_z"][0]),
            ts.metadata["n_max"], d["norm_drift"], d["lz_drift"], d["energy_rel_drift"]]


def _cmd_single_sweep(cfg, manifest):
    table = SweepTable(["g", "peak_total_photons", "gt_at_peak", "mean_sigma_z", "min_sigma_z",
                        "max_sigma_z_after_start", "n_max", "norm_drift", "lz_drift", "energy_rel_drift"])
    for res in _map(_guarded(_single_sweep_point), [(cfg, g) for g in _g_values(cfg)], cfg.workers):
        if isinstance(res, dict):
            manifest.failures.append(res)
        else:
            table.append(res)
    return [("single_sweep", table)]


# ---------------------------------------------------------------------------
# V-level
# ---------------------------------------------------------------------------


def _vlevel_point(args):
    cfg, g = args
    from .vlevel import v_sector_spectrum

    p = cfg.params.replace(g=float(g))
    rows = []
    for l in cfg.sectors:
        sol = v_sector_spectrum(p, l, n_max=cfg.n_max, k=cfg.levels, tol=cfg.eig_tol)
        for i in range(min(cfg.levels, len(sol.energies))):
            rows.append([float(g), l, i, float(sol.energies[i]), sol.metadata["n_max"], sol.metadata["drift"]])
    return rows


def _cmd_vlevel_eig(cfg, manifest):
    table = SweepTable(["g", "l", "level", "energy", "n_max", "drift"])
    for res in _map(_guarded(_vlevel_point), [(cfg, g) for g in _g_values(cfg)], cfg.workers):
        if isinstance(res, dict):
            manifest.failures.append(res)
            continue
        for r in res:
            table.append(r)
    return [("vlevel_eig_energies", table)]


# ---------------------------------------------------------------------------
# lattice
# ---------------------------------------------------------------------------


def _lattice_point(args):
    cfg, g = args
    from .lattice import classify_phase, lattice_ground_state
    from .rwa import rwa_bound_state_energies

    p = cfg.params.replace(g=float(g))
    n_max = 2 if cfg.n_max is None else cfg.n_max
    ground, sites = [], []
    results = {}
    for l in cfg.sectors:
        gs = lattice_ground_state(p, l, n_max, tol=cfg.lanczos_tol)
        o = gs.observables
        results[l] = gs
        ground.append([float(g), l, gs.energy, o.pop_e, o.total_n_a, o.total_n_b, float(o.n_a_sites[0]),
                       float(o.n_b_sites[0]), o.lz, gs.boundary_contaminated, float(gs.solution.residuals[0])])
        for i in range(p.L):
            sites.append([float(g), l, i, float(o.n_a_sites[i]), float(o.n_b_sites[i])])
    phase = None
    if 0 in results and 1 in results:
        lab = classify_phase(p, results[1].energy, results[0].energy, results[1].boundary_contaminated, n_max)
        rwa = rwa_bound_state_energies(p) if p.J > 0 and np.isclose(p.omega0, p.omega_c) else None
        d = lab.diagnostics
        phase = [float(g), lab.label, lab.ambiguous, d["binding"], d["threshold"], d["resolution"],
                 d.get("upper_level"), d.get("upper_slope"), None if rwa is None else rwa[0],
                 None if rwa is None else rwa[1]]
    return {"ground": ground, "sites": sites, "phase": phase}


def _cmd_lattice_ground(cfg, manifest):
    tg = SweepTable(["g", "l", "energy", "pop_e", "total_n_a", "total_n_b", "n_a_site0", "n_b_site0", "lz",
                     "boundary_contaminated", "residual"])
    ts = SweepTable(["g", "l", "site", "n_a", "n_b"])
    tp = SweepTable(["g", "phase", "ambiguous", "binding", "threshold", "resolution", "upper_level",
                     "upper_slope", "rwa_e_minus", "rwa_e_plus"])
    for res in _map(_guarded(_lattice_point), [(cfg, g) for g in _g_values(cfg)], cfg.workers):
        if "failure" in res:
            manifest.failures.append(res)
            continue
        for r in res["ground"]:
            tg.append(r)
        for r in res["sites"]:
            ts.append(r)
        if res["phase"] is not None:
            tp.append(res["phase"])
    out = [("lattice_ground", tg), ("lattice_ground_sites", ts)]
    if tp.rows:
        out.append(("lattice_phase", tp))
    return out


def _cmd_lattice_quench(cfg, manifest):
    from .lattice import lattice_quench

    p = cfg.params
    w0t, gt = _times_omega0(cfg, p.g) if p.g > 0 else (cfg.time_grid.values, np.zeros(len(cfg.time_grid.values)))
    n_max = 2 if cfg.n_max is None else cfg.n_max
    q = lattice_quench(p, w0t / p.omega0, n_max=n_max, err_tol=cfg.krylov_tol, ground_tol=cfg.lanczos_tol)
    scal = SweepTable(["omega0_t", "gt", "pop_e", "total_n_a", "total_n_b", "n_a_site0", "n_b_site0", "norm", "lz",
                       "energy"])
    sites = SweepTable(["omega0_t", "gt", "site", "n_a", "n_b"])
    for i in range(len(w0t)):
        scal.append([w0t[i], gt[i], q.pop_e[i], q.total_n_a[i], q.total_n_b[i], q.n_a_site0[i], q.n_b_site0[i],
                     q.norm[i], q.lz[i], q.energy[i]])
        for s in range(p.L):
            sites.append([w0t[i], gt[i], s, q.n_a_sites[i, s], q.n_b_sites[i, s]])
    manifest.summary.update(
        overlap_with_ground=q.overlap_with_ground,
        final_overlap_with_ground=q.final_overlap_with_ground,
        ground_energy=q.ground_energy,
        norm_drift=float(np.max(np.abs(q.norm - 1))),
        lz_drift=float(np.max(np.abs(q.lz - q.lz[0]))),
        energy_rel_drift=float(np.max(np.abs(q.energy - q.energy[0])) / max(1.0, abs(q.energy[0]))),
        dim=q.metadata["dim"],
    )
    return [("lattice_quench", scal), ("lattice_quench_sites", sites)]


# ---------------------------------------------------------------------------
# RWA analytics
# ---------------------------------------------------------------------------


def _cmd_rwa_bound(cfg, manifest):
    from .rwa import band_edges, bound_state_threshold, rwa_bound_state_energies

    table = SweepTable(["g", "e_minus", "e_plus", "band_lo", "band_hi", "threshold"])
    for g in _g_values(cfg):
        p = cfg.params.replace(g=float(g))
        res = rwa_bound_state_energies(p)
        lo, hi = band_edges(p)
        table.append([float(g), None if res is None else res[0], None if res is None else res[1], lo, hi,
                      bound_state_threshold(p)])
    return [("rwa_bound", table)]


def _cmd_rwa_oracle(cfg, manifest):
    from .rwa import rwa_bound_state_energies, rwa_finite_oracle

    p = cfg.params
    fin = rwa_finite_oracle(p, p.L)
    lo, hi = fin.band
    table = SweepTable(["index", "energy", "emitter_weight", "region"])
    for i, (e, w) in enumerate(zip(fin.energies, fin.emitter_weight)):
        region = "below" if e in fin.below else "above" if e in fin.above else "band"
        table.append([i, float(e), float(w), region])
    exact = rwa_bound_state_energies(p) if p.J > 0 else None
    manifest.summary.update(n_below=len(fin.below), n_above=len(fin.above), spacing=fin.spacing,
                            band=[lo, hi], analytic=None if exact is None else list(exact))
    return [("rwa_oracle", table)]


# ---------------------------------------------------------------------------
# self test
# ---------------------------------------------------------------------------


def selftest_checks() -> list:
    """Oracle-equivalence checks at small size: (name, error, tolerance)."""
    from .hilbert import build_lattice_sector_basis, build_single_sector_basis
    from .lattice import assemble_lattice_hamiltonian
    from .oracles import brute_force_lattice_oracle, brute_force_two_mode_oracle, brute_force_v_level_oracle
    from .single import assemble_single_hamiltonian
    from .vlevel import assemble_v_hamiltonian, build_v_sector_basis

    checks = []
    for g in (0.5, 2.0):
        p = ModelParams(g=g)
        cap = 30
        o = brute_force_two_mode_oracle(p, cap)
        for l in (-1, 0, 1, 2):
            b = build_single_sector_basis(l, cap + 5, photon_cap=cap)
            e = np.linalg.eigvalsh(assemble_single_hamiltonian(p, b).toarray())
            checks.append((f"single g={g} l={l}", float(np.max(np.abs(e - o.sector_energies(l)))), 1e-10))
    p = ModelParams(g=0.5, delta=0.0)
    o = brute_force_v_level_oracle(p, 20)
    for l in (-1, 0, 1):
        b = build_v_sector_basis(l, 25, photon_cap=20)
        e = np.linalg.eigvalsh(assemble_v_hamiltonian(p, b).toarray())
        checks.append((f"vlevel l={l}", float(np.max(np.abs(e - o.sector_energies(l)))), 1e-8))
    p = ModelParams(g=0.5, J=0.2, L=3)
    o = brute_force_lattice_oracle(p, 2)
    for l in (0, 1, 2):
        b = build_lattice_sector_basis(p, l, 6, site_cap=2)
        e = np.linalg.eigvalsh(assemble_lattice_hamiltonian(p, b).toarray())
        checks.append((f"lattice L=3 l={l}", float(np.max(np.abs(e - o.sector_energies(l)))), 1e-8))
    return checks


def _cmd_selftest(cfg, manifest):
    table = SweepTable(["check", "max_error", "tolerance", "passed"])
    for name, err, tol in selftest_checks():
        ok = err <= tol
        print(f"{'PASS' if ok else 'FAIL'} {name}: {err:.3e} (tol {tol:.0e})")
        table.append([name, err, tol, ok])
    manifest.summary["all_passed"] = all(r[3] for r in table.rows)
    return [("selftest", table)]


COMMANDS = {
    ("single", "eig"): _cmd_single_eig,
    ("single", "dynamics"): _cmd_single_dynamics,
    ("single", "sweep"): _cmd_single_sweep,
    ("vlevel", "eig"): _cmd_vlevel_eig,
    ("lattice", "ground"): _cmd_lattice_ground,
    ("lattice", "quench"): _cmd_lattice_quench,
    ("rwa", "bound"): _cmd_rwa_bound,
    ("rwa", "oracle"): _cmd_rwa_oracle,
    ("selftest", "run"): _cmd_selftest,
}


def run(config: RunConfig) -> int:
    """Execute one configured run, write its tables and manifest, return an exit status."""
    out = config.output_path
    out.mkdir(parents=True, exist_ok=True)
    cfg_dict = config.as_dict()
    # output location and worker count do not change results, so they stay out of the hash
    hashed = {k: v for k, v in cfg_dict.items() if k not in ("output_dir", "workers")}
    manifest = Manifest(command=f"{config.model} {config.action}", config=cfg_dict,
                        config_hash=config_hash(hashed), version=code_version())
    provenance = {
        "command": manifest.command,
        "config_sha256": manifest.config_hash,
        "code_version": manifest.version,
        "eig_tol": repr(config.eig_tol),
        "krylov_tol": repr(config.krylov_tol),
        "lanczos_tol": repr(config.lanczos_tol),
        "units": "energies in omega0; times as omega0*t and g*t",
    }
    t0 = time.perf_counter()
    try:
        tables = COMMANDS[(config.model, config.action)](config, manifest)
    except (SolverError, BasisTooLargeError, ConfigError) as exc:
        log.error("%s", exc)
        manifest.failures.append({"failure": f"{type(exc).__name__}: {exc}"})
        tables = []
    manifest.wall_times["compute"] = time.perf_counter() - t0
    t1 = time.perf_counter()
    for _, table in tables:
        table.provenance.update(provenance)
        if table.dropped:
            manifest.failures.append({"failure": f"{table.dropped} rows with non-finite values dropped"})
    write_tables(tables, out, manifest)
    manifest.wall_times["write"] = time.perf_counter() - t1
    manifest.write(out / "manifest.json")
    for f in manifest.failures:
        log.warning("failed point: %s", f)
    if config.model == "selftest" and not manifest.summary.get("all_passed", False):
        return 1
    if not tables:
        return 2
    return 1 if manifest.failures else 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _sectors(s: str) -> tuple:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--out", dest="output_dir", help="output directory")
    p.add_argument("--workers", type=int, help="parallel grid points")
    p.add_argument("--omega0", dest="params.omega0", type=float)
    p.add_argument("--omega-c", dest="params.omega_c", type=float)
    p.add_argument("--g", dest="params.g", type=float, help="coupling for single-point runs")
    p.add_argument("--J", dest="params.J", type=float)
    p.add_argument("--L", dest="params.L", type=int)
    p.add_argument("--delta", dest="params.delta", type=float)
    p.add_argument("--g-grid", dest="g_grid", type=Grid, help="start:stop:step or comma list")
    p.add_argument("--l", dest="sectors", type=_sectors, help="comma-separated sectors")
    p.add_argument("--nmax", dest="n_max", type=int)
    p.add_argument("--levels", type=int)
    p.add_argument("--time-grid", dest="time_grid", type=Grid)
    p.add_argument("--tmax", type=float, help="end of the time grid (keeps the step)")
    p.add_argument("--dt", type=float, help="time step")
    p.add_argument("--time-unit", dest="time_unit", choices=("gt", "gt_2pi", "omega0_t"))
    p.add_argument("--eig-tol", dest="eig_tol", type=float)
    p.add_argument("--krylov-tol", dest="krylov_tol", type=float)
    p.add_argument("--lanczos-tol", dest="lanczos_tol", type=float)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chiral-rabi", description="Chiral Rabi model and coupled-cavity lattice")
    parser.add_argument("--config", help="INI configuration file")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    models = parser.add_subparsers(dest="model", required=True)
    for model, actions in ACTIONS.items():
        if model == "selftest":
            sp = models.add_parser("selftest", help="oracle-equivalence checks")
            _add_common(sp)
            continue
        mp = models.add_parser(model)
        acts = mp.add_subparsers(dest="action", required=True)
        for action in actions:
            _add_common(acts.add_parser(action))
    return parser


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    model = ns.model
    action = getattr(ns, "action", None) or "run"
    merged = dict(DEFAULTS[(model, action)])
    source = None
    if ns.config:
        source = ns.config
        with open(ns.config, encoding="utf-8") as fh:
            from_file = parse_config_text(fh.read(), ns.config)
        for key, given in (("model", model), ("action", action)):
            if key in from_file and from_file[key] != given:
                raise ConfigError(f"config {key} {from_file[key]!r} does not match the command line", None, source)
        merged.update({k: v for k, v in from_file.items() if k not in ("model", "action")})
    skip = {"config", "verbose", "model", "action", "tmax", "dt"}
    for key, val in vars(ns).items():
        if key in skip or val is None:
            continue
        merged[key] = val
    if ns.tmax is not None or ns.dt is not None:
        old = merged.get("time_grid")
        start = 0.0
        step = ns.dt if ns.dt is not None else (float(old.spec.split(":")[2]) if old and ":" in old.spec else 0.05)
        stop = ns.tmax if ns.tmax is not None else (float(old.values[-1]) if old else 1.0)
        merged["time_grid"] = Grid(f"{start!r}:{stop!r}:{step!r}")
    if ns.g_grid is None and getattr(ns, "params.g") is not None:
        # an explicit single coupling on the command line replaces any sweep
        merged.pop("g_grid", None)
    return build_config(dict(merged, model=model, action=action), source)


def main(argv=None) -> int:
    parser = make_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(ns)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
