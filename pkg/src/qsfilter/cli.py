"""Command-line front end: ensembles, dt sweeps, oracle comparison and verification.

Scenario files are TOML or JSON.  Keys (all optional):

``kind``      ``"spin"`` (quadrature observation of every coupling) or
              ``"emitter"`` (two-level emitter with ``L = sqrt(gamma) sigma_-``
              under photon counting)
``u``         field vector, or ``{t = [...], values = [[...], ...]}``
``r``         list of measurement vectors (spin)
``gamma``     emission rate (emitter)
``p0``        initial polarization
``psi``       initial state vector as ``[[re, im], ...]`` (oracle comparison)
``T``, ``dt``, ``seed``, ``ensemble``, ``bins``, ``keep``
``scheme``    ``"euler"`` or ``"milstein"`` for the noise terms
``drift``     ``"euler"`` or ``"exact"`` for the innovation-free part
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ensemble import coarsen, draw_normals, run_ensemble, write_jsonl
from .filtering import ObservationChannel, SystemModel, initial_condition, update_diffusive, FilterState
from .fockbin import NoiseLattice, ObservationProcess, conditional_expectation_oracle
from .spin import PAULI, SpinScenario, collapse_check, mean_ode, simulate_spin, simulate_spin_linear
from .verify import algebra_battery, lattice_battery

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("qsfilter")

MODES = ("nonlinear", "linear", "dual", "counting", "oracle-compare", "algebra-verify")
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    scenario: dict = field(default_factory=dict)
    mode: str = "nonlinear"
    ensemble: int = 1
    seed: int = 0
    out: Path = Path("qsfilter-out")
    plots: bool = False
    dt: float | None = None
    dt_sweep: tuple = ()
    keep: int = 10

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {', '.join(MODES)}")
        if self.ensemble < 1:
            raise ConfigError("ensemble size must be at least 1")
        sweep = list(self.dt_sweep)
        if any(b >= a for a, b in zip(sweep, sweep[1:])):
            raise ConfigError("--dt-sweep must be strictly decreasing")
        if any(x <= 0 for x in sweep):
            raise ConfigError("--dt-sweep entries must be positive")
        self.out = Path(self.out)

    @property
    def step(self) -> float:
        return float(self.dt if self.dt is not None else self.scenario.get("dt", 1e-3))


def load_scenario(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {p}: {exc}") from exc
    try:
        if p.suffix.lower() == ".json":
            return json.loads(raw.decode("utf-8"))
        return tomllib.loads(raw.decode("utf-8"))
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse scenario {p}: {exc}") from exc


def spin_scenario(cfg: RunConfig) -> SpinScenario:
    sc = cfg.scenario
    try:
        return SpinScenario(
            u=sc.get("u", (0.0, 0.0, 0.0)),
            r=[tuple(r) if not isinstance(r, dict) else r for r in sc.get("r", [(0.0, 0.0, 2.0)])],
            p0=tuple(sc.get("p0", (0.0, 0.0, 0.0))),
            T=float(sc.get("T", 1.0)),
            dt=cfg.step,
            seed=cfg.seed,
            ensemble=cfg.ensemble,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def emitter_model(sc: dict) -> tuple[SystemModel, list, np.ndarray]:
    gamma = float(sc.get("gamma", 1.0))
    u = np.asarray(sc.get("u", (0.0, 0.0, 0.0)), dtype=float)
    H = 0.5 * np.einsum("j,jab->ab", u, PAULI)
    model = SystemModel(H, [math.sqrt(gamma) * SIGMA_MINUS])
    p0 = np.asarray(sc.get("p0", (0.0, 0.0, 1.0)), dtype=float)
    if np.linalg.norm(p0) > 1 + 1e-12:
        raise ConfigError("|p0| exceeds 1")
    return model, [ObservationChannel.counting()], np.concatenate([[1.0], p0])


def pure_state(sc: dict) -> np.ndarray:
    if "psi" in sc:
        psi = np.array([complex(a, b) for a, b in sc["psi"]])
        return psi / np.linalg.norm(psi)
    p0 = np.asarray(sc.get("p0", (0.0, 0.0, 1.0)), dtype=float)
    if abs(np.linalg.norm(p0) - 1.0) > 1e-9:
        raise ConfigError("oracle comparison needs a pure initial state: give psi or |p0| = 1")
    theta = math.acos(max(-1.0, min(1.0, p0[2])))
    phi = math.atan2(p0[1], p0[0])
    return np.array([math.cos(theta / 2), np.exp(1j * phi) * math.sin(theta / 2)])


# modes -----------------------------------------------------------------------


def _write_summary(cfg: RunConfig, summary, extra: dict | None = None):
    cfg.out.mkdir(parents=True, exist_ok=True)
    summary.to_csv(cfg.out / "summary.csv")
    data = summary.to_dict()
    if extra:
        data.update(extra)
    (cfg.out / "summary.json").write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")


def integrator(sc: dict) -> tuple[str, str]:
    """``(scheme, drift)`` from the scenario, Euler for both by default."""
    scheme = str(sc.get("scheme", "euler"))
    drift = str(sc.get("drift", "euler"))
    if scheme not in ("euler", "milstein"):
        raise ConfigError(f"unknown scheme {scheme!r}; use 'euler' or 'milstein'")
    if drift not in ("euler", "exact"):
        raise ConfigError(f"unknown drift {drift!r}; use 'euler' or 'exact'")
    return scheme, drift


def run_nonlinear(cfg: RunConfig) -> int:
    sc = spin_scenario(cfg)
    scheme, drift = integrator(cfg.scenario)
    n_ck = int(cfg.scenario.get("checkpoints", 10))
    summary, kept = run_ensemble(sc.model(), sc.channels(), sc.e0(), sc.T, sc.dt, cfg.ensemble, cfg.seed,
                                 n_checkpoints=n_ck, keep=min(cfg.keep, cfg.ensemble),
                                 names=("I", "p1", "p2", "p3"), scheme=scheme, drift=drift)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_jsonl(cfg.out / "trajectories.jsonl", kept)
    _write_summary(cfg, summary)
    if cfg.plots:
        from .plots import emit_plots

        emit_plots(cfg.out, summary, kept, (summary.t, mean_ode(sc, summary.t)))
    print(f"wrote {len(kept)} trajectories and a summary over M={cfg.ensemble} to {cfg.out}")
    return 0


def _dual_paths(sc: SpinScenario, dW: np.ndarray, scheme: str, drift: str):
    rec = simulate_spin(sc, dW, scheme=scheme, drift=drift)
    f, rho = simulate_spin_linear(sc, rec.dY, scheme)
    return rec, f, rho


def run_linear(cfg: RunConfig) -> int:
    """Linear filter under the reference measure, where ``Y`` is a standard Wiener process.

    ``rho`` is then the likelihood ratio of the physical law, so its mean
    stays at 1, and ``rho``-weighted averages of ``p = f / rho`` reproduce
    the physical ensemble means.
    """
    sc = spin_scenario(cfg)
    M = cfg.ensemble
    dY = draw_normals(cfg.seed, range(M), sc.n_steps, sc.n_ch, sc.dt)
    f, rho = simulate_spin_linear(sc, dY, integrator(cfg.scenario)[0])
    t = sc.dt * np.arange(sc.n_steps + 1)
    cfg.out.mkdir(parents=True, exist_ok=True)
    with open(cfg.out / "trajectories.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for k in range(min(cfg.keep, M)):
            for j, tj in enumerate(t):
                row = {"t": float(tj), "traj": k,
                       "dY": None if j == 0 else dY[j - 1, k].tolist(),
                       "f": f[j, k].tolist(), "rho": float(rho[j, k])}
                fh.write(json.dumps(row) + "\n")
    weighted = (f[-1]).mean(axis=0)
    stats = {"M": M, "T": sc.T,
             "rho_mean_T": float(rho[-1].mean()),
             "rho_stderr_T": float(rho[-1].std(ddof=1) / math.sqrt(M)) if M > 1 else 0.0,
             "rho_min": float(rho.min()),
             "weighted_mean_p_T": weighted.tolist(),
             "reference_mean_p_T": mean_ode(sc, [sc.T])[0].tolist()}
    (cfg.out / "summary.json").write_text(json.dumps(stats, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(stats))
    return 0


def dual_sweep(sc: SpinScenario, M: int, seed: int, sweep, scheme: str = "euler",
               drift: str = "euler") -> list[dict]:
    """Collapse residual versus dt on shared Brownian paths.

    The finest dt drives the noise; coarser grids sum its increments, so
    every dt in ``sweep`` must divide the largest one by an integer factor
    relative to the finest.
    """
    sweep = sorted(sweep, reverse=True)
    fine = sweep[-1]
    n_fine = sc.with_dt(fine).n_steps
    dW = draw_normals(seed, range(M), n_fine, sc.n_ch, fine)
    rows = []
    for dt in sweep:
        factor = dt / fine
        if abs(factor - round(factor)) > 1e-9:
            raise ConfigError(f"dt={dt} is not an integer multiple of {fine}")
        s = sc.with_dt(dt)
        rec, f, rho = _dual_paths(s, coarsen(dW, int(round(factor))), scheme, drift)
        mon = collapse_check(rec, s, f, rho)
        rows.append({"dt": dt, "mean_max_residual": float(mon.max_abs.mean()),
                     "max_residual": float(mon.max_abs.max())})
    for a, b in zip(rows, rows[1:]):
        b["order"] = math.log(a["mean_max_residual"] / b["mean_max_residual"]) / math.log(a["dt"] / b["dt"])
    return rows


def run_dual(cfg: RunConfig) -> int:
    sc = spin_scenario(cfg)
    M = cfg.ensemble
    cfg.out.mkdir(parents=True, exist_ok=True)
    dW = draw_normals(cfg.seed, range(M), sc.n_steps, sc.n_ch, sc.dt)
    scheme, drift = integrator(cfg.scenario)
    rec, f, rho = _dual_paths(sc, dW, scheme, drift)
    mon = collapse_check(rec, sc, f, rho)
    kept = []
    for k in range(min(cfg.keep, M)):
        r = rec.trajectory(k)
        r.rho = rho[:, k]
        kept.append((k, r))
    write_jsonl(cfg.out / "trajectories.jsonl", kept)
    stats = {"max_abs_residual": float(mon.max_abs.max()),
             "mean_max_abs_residual": float(mon.max_abs.mean()),
             "median_terminal_purity_defect": float(np.median(mon.terminal_defect)),
             "lambda_T": float(mon.lam[-1])}
    rows = dual_sweep(sc, M, cfg.seed, cfg.dt_sweep, scheme, drift) if cfg.dt_sweep else []
    if rows:
        _write_sweep(cfg.out / "sweep.csv", rows)
    (cfg.out / "dual_summary.json").write_text(json.dumps({"collapse": stats, "sweep": rows}, indent=2) + "\n",
                                               encoding="utf-8")
    if cfg.plots:
        from .plots import emit_plots
        from .spin import CollapseMonitor

        one = CollapseMonitor(mon.t, mon.lam, mon.residual[:, 0], mon.max_abs[:1],
                              mon.purity_defect[:, 0], mon.predicted_defect[:, 0])
        emit_plots(cfg.out, None, kept, None, one)
    print(json.dumps(stats))
    for row in rows:
        print(json.dumps(row))
    return 0


def _write_sweep(path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("dt,mean_max_residual,max_residual,order\n")
        for row in rows:
            order = row.get("order")
            fh.write(f"{row['dt']!r},{row['mean_max_residual']!r},{row['max_residual']!r},"
                     f"{'' if order is None else repr(order)}\n")


def run_counting(cfg: RunConfig) -> int:
    model, channels, e0 = emitter_model(cfg.scenario)
    T = float(cfg.scenario.get("T", 5.0))
    summary, kept = run_ensemble(model, channels, e0, T, cfg.step, cfg.ensemble, cfg.seed, mode="counting",
                                 n_checkpoints=int(cfg.scenario.get("checkpoints", 10)),
                                 keep=min(cfg.keep, cfg.ensemble), names=("I", "p1", "p2", "p3"))
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_jsonl(cfg.out / "trajectories.jsonl", kept)
    _write_summary(cfg, summary)
    if cfg.plots:
        from .plots import emit_plots

        emit_plots(cfg.out, summary, kept)
    print(f"wrote {len(kept)} counting trajectories and a summary over M={cfg.ensemble} to {cfg.out}")
    return 0


def oracle_compare(sc: dict, dt: float, n_bins: int) -> tuple[dict, list[dict]]:
    """Oracle posterior table and the filter driven by the same outcomes."""
    scen = SpinScenario(u=sc.get("u", (0.0, 0.0, 0.0)), r=[tuple(r) for r in sc.get("r", [(0.0, 0.0, 2.0)])],
                        p0=(0.0, 0.0, 0.0), T=dt * n_bins, dt=dt)
    model = scen.model()
    psi = pure_state(sc)
    lat = NoiseLattice(n_bins, dt, q=1, m=scen.n_ch, d_sys=2)
    obs = [ObservationProcess.quadrature(k, scen.n_ch) for k in range(1, scen.n_ch + 1)]
    ops = {"p1": PAULI[0], "p2": PAULI[1], "p3": PAULI[2]}
    table = conditional_expectation_oracle(lat, model.generator(0.0), obs, ops, psi, n_bins)
    e0 = initial_condition(model, psi)[0].state
    rows = []
    for o in table.outcomes:
        st = FilterState(e0.e.copy())
        # lattice increments are two-valued, so the Milstein correction does not apply
        for dy in o.increments():
            st, _ = update_diffusive(model, scen.channels(), st, dy, dt, check=False, scheme="euler")
        filt = {k: float(st.e[1 + j]) for j, k in enumerate(("p1", "p2", "p3"))}
        rows.append({"outcome": o.label, "probability": o.probability,
                     **{f"oracle_{k}": v for k, v in o.means.items()},
                     **{f"filter_{k}": v for k, v in filt.items()},
                     "max_abs_diff": max(abs(o.means[k] - filt[k]) for k in filt)})
    return table.to_dict(), rows


def run_oracle_compare(cfg: RunConfig) -> int:
    n_bins = int(cfg.scenario.get("bins", 2))
    dt = float(cfg.dt if cfg.dt is not None else cfg.scenario.get("dt", 0.05))
    table, rows = oracle_compare(cfg.scenario, dt, n_bins)
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "oracle.json").write_text(json.dumps(table, indent=2) + "\n", encoding="utf-8")
    keys = list(rows[0].keys())
    with open(cfg.out / "oracle_compare.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(keys) + "\n")
        for row in rows:
            fh.write(",".join(f'"{row[k]}"' if k == "outcome" else repr(row[k]) for k in keys) + "\n")
    print(f"{'outcome':<40s} {'prob':>8s} {'oracle p3':>10s} {'filter p3':>10s} {'|diff|max':>10s}")
    for row in rows:
        print(f"{row['outcome']:<40s} {row['probability']:8.4f} {row['oracle_p3']:10.5f} "
              f"{row['filter_p3']:10.5f} {row['max_abs_diff']:10.2e}")
    return 0


def run_verify(cfg: RunConfig, lattice: bool = True) -> int:
    results = algebra_battery(seed=cfg.seed) + (lattice_battery(seed=cfg.seed) if lattice else [])
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print("all checks passed" if ok else "some checks FAILED")
    return 0 if ok else 1


def dispatch(cfg: RunConfig) -> int:
    return {
        "nonlinear": run_nonlinear,
        "linear": run_linear,
        "dual": run_dual,
        "counting": run_counting,
        "oracle-compare": run_oracle_compare,
        "algebra-verify": lambda c: run_verify(c, lattice=False),
    }[cfg.mode](cfg)


# argument parsing -----------------------------------------------------------------


def _sweep(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad dt list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qsfilter", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, mode_default=None, with_mode=True):
        p.add_argument("--scenario", help="scenario file (TOML or JSON)")
        if with_mode:
            p.add_argument("--mode", choices=MODES, default=mode_default)
        p.add_argument("--seed", type=int, help="master seed (overrides the scenario)")
        p.add_argument("--ensemble", type=int, help="number of trajectories")
        p.add_argument("--dt", type=float, help="time step / bin width")
        p.add_argument("--out", default="qsfilter-out", help="output directory")
        p.add_argument("--plots", action="store_true", help="write SVG plots (needs matplotlib)")
        p.add_argument("--dt-sweep", type=_sweep, default=(), help="comma-separated decreasing dt list")
        p.add_argument("--keep", type=int, default=None, help="trajectories written in full")

    common(sub.add_parser("run", help="simulate an ensemble"), "nonlinear")
    common(sub.add_parser("verify", help="run the identity batteries"), with_mode=False)
    common(sub.add_parser("oracle-compare", help="lattice oracle versus filter"), with_mode=False)
    common(sub.add_parser("sweep", help="collapse residual over a dt sweep"), with_mode=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def config_from_args(args) -> RunConfig:
    scenario = load_scenario(args.scenario)
    mode = {"run": getattr(args, "mode", None), "verify": "algebra-verify",
            "oracle-compare": "oracle-compare", "sweep": "dual"}[args.command]
    if mode is None:
        mode = scenario.get("mode", "nonlinear")
    sweep = tuple(args.dt_sweep) or tuple(scenario.get("dt_sweep", ()))
    if args.command == "sweep" and not sweep:
        raise ConfigError("sweep needs --dt-sweep")
    keep = args.keep if args.keep is not None else int(scenario.get("keep", 10))
    return RunConfig(
        scenario=scenario,
        mode=mode,
        ensemble=int(args.ensemble if args.ensemble is not None else scenario.get("ensemble", 1)),
        seed=int(args.seed if args.seed is not None else scenario.get("seed", 0)),
        out=Path(args.out),
        plots=bool(args.plots),
        dt=args.dt,
        dt_sweep=sweep,
        keep=keep,
    )


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "verify":
            return run_verify(cfg)
        return dispatch(cfg)
    except (ConfigError, ValueError) as exc:
        print(f"qsfilter: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
