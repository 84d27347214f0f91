"""Config-driven command line front end.

Commands: solve, sweep, lp, verify, minimize. Each reads one JSON config file,
runs the corresponding pipeline, and writes machine-readable reports into the
output directory. Every output embeds the resolved config and seed, and reruns
with the same config byte-reproduce the outputs.

Exit codes: 0 success, 1 config or usage error, 2 numerical non-convergence
(or a recorded assumption failure in `minimize`).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import discretize, eigensolve, model as model_mod, montecarlo, occupation, twist
from .errors import ConvergenceError, RSEigError, InvalidArgument, NotFound


def _load_config(path):
    with open(path) as fh:
        return json.load(fh)


def _resolve_model(cfg):
    spec = cfg.get("model")
    if spec is None:
        raise InvalidArgument("config needs a 'model' entry")
    if isinstance(spec, str):
        return model_mod.builtin_instance(spec)
    return model_mod.polynomial_model(
        controls=spec["controls"],
        drift_coeffs=spec["drift"],
        sigma_coeffs=spec["sigma"],
        reward_coeffs=spec["reward"],
        reward_upper_bound=spec["reward_upper_bound"],
        direction=spec.get("direction", "maximize"),
        name=spec.get("name", "poly"),
    )


def _resolve_grid(cfg, mdl):
    g = cfg.get("grid", {})
    radius = g.get("radius")
    if radius is None or radius <= 0:
        raise InvalidArgument("grid.radius must be positive")
    if "nodes_per_axis" in g:
        n = int(g["nodes_per_axis"])
    elif "nodes_per_unit" in g:
        n = int(round(2 * radius * g["nodes_per_unit"]))
        if n % 2 == 0:
            n += 1
    else:
        raise InvalidArgument("grid needs nodes_per_axis or nodes_per_unit")
    return discretize.build_grid(mdl.dimension, float(radius), n), g.get("bc", "neumann")


def _tol(cfg):
    t = cfg.get("solver", {}).get("tol", 1e-10)
    if t <= 0:
        raise InvalidArgument("solver.tol must be positive")
    return float(t)


def _seed(cfg, override):
    return int(override if override is not None else cfg.get("seed", 0))


def _sim_config(cfg, seed, mdl):
    s = cfg.get("sim", {})
    return montecarlo.SimConfig(
        horizon=float(s.get("horizon", 20.0)),
        dt=float(s.get("dt", 1e-3)),
        paths=int(s.get("paths", 10_000)),
        seed=seed,
        start=np.asarray(s.get("start", [0.0] * mdl.dimension), dtype=float),
        boundary_radius=s.get("boundary_radius"),
    )


def _write_json(path: Path, payload: dict, cfg: dict, seed: int) -> None:
    payload = dict(payload)
    payload["config"] = cfg
    payload["seed"] = seed
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def _config_comment(cfg: dict, seed: int) -> str:
    return "# config: " + json.dumps({"config": cfg, "seed": seed}, sort_keys=True) + "\n"


def _write_phi_csv(path: Path, grid, active_index, vector, cfg, seed):
    cols = [f"x{j}" for j in range(grid.dimension)]
    lines = [_config_comment(cfg, seed), ",".join(cols + ["value"]) + "\n"]
    for pos, node in enumerate(active_index):
        coords = ",".join(repr(float(v)) for v in grid.nodes[node])
        lines.append(f"{coords},{repr(float(vector[pos]))}\n")
    path.write_text("".join(lines))


def cmd_solve(cfg, out_dir: Path, seed: int, export_generator=None) -> int:
    mdl = _resolve_model(cfg)
    grid, bc = _resolve_grid(cfg, mdl)
    tol = _tol(cfg)
    pair, policy = eigensolve.solve_semilinear(mdl, grid, bc, tol)
    gen0 = discretize.build_generator(mdl, grid, 0, bc)
    _write_json(out_dir / "eigenpair.json",
                {"value": pair.value, "residual": pair.residual,
                 "iterations": pair.iterations, "bc": bc,
                 "min_vector": float(pair.vector.min())},
                cfg, seed)
    _write_phi_csv(out_dir / "phi.csv", grid, gen0.active_index if bc == "dirichlet"
                   else np.arange(grid.n_total), pair.vector, cfg, seed)
    if export_generator:
        discretize.write_triplets(gen0, export_generator)
    print(f"solve: value={pair.value!r} residual={pair.residual:.3e}")
    return 0


def cmd_sweep(cfg, out_dir: Path, seed: int) -> int:
    mdl = _resolve_model(cfg)
    tol = _tol(cfg)
    sw = cfg.get("sweep", {})
    radii = sw.get("radii")
    if not radii:
        raise InvalidArgument("sweep.radii must be a non-empty increasing list")
    table = eigensolve.domain_sweep(mdl, radii, sw.get("bcs", ["dirichlet", "neumann"]),
                                    int(sw.get("nodes_per_unit", 50)), tol)
    (out_dir / "sweep.csv").write_text(_config_comment(cfg, seed) + table.to_csv())
    _write_json(out_dir / "sweep.json",
                {"rows": [vars(r) for r in table.rows],
                 "extrapolated_value": table.extrapolated_value},
                cfg, seed)
    print(f"sweep: {len(table.rows)} rows, extrapolated={table.extrapolated_value!r}")
    return 0


def _export_lp_text(path, extgen, reward):
    """Plain LP interchange text (CPLEX LP format) for external cross-checks."""
    R = reward.values.reshape(-1)
    S = occupation._stationarity_rows(extgen).tocoo()
    lines = ["\\ occupation-measure linear program", "Maximize", " obj:"]
    terms = [f" {'+' if v >= 0 else '-'} {abs(v)!r} m{j}" for j, v in enumerate(R)]
    lines[-1] += "".join(terms)
    lines.append("Subject To")
    rows = {}
    for r, c, v in zip(S.row, S.col, S.data):
        rows.setdefault(r, []).append((c, v))
    for r in sorted(rows):
        body = "".join(f" {'+' if v >= 0 else '-'} {abs(v)!r} m{c}" for c, v in sorted(rows[r]))
        lines.append(f" bal{r}:{body} = 0")
    lines.append(" mass:" + "".join(f" + m{j}" for j in range(len(R))) + " = 1")
    lines.append("End")
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_lp(cfg, out_dir: Path, seed: int, export_lp=None) -> int:
    mdl = _resolve_model(cfg)
    grid, _ = _resolve_grid(cfg, mdl)
    tol = _tol(cfg)
    tables = discretize.tabulate_fields(mdl, grid)
    pair, policy = eigensolve.solve_semilinear(mdl, grid, "neumann", tol, tables=tables)
    ycfg = cfg.get("ygrid", {})
    grad = discretize.gradient_on_grid(np.log(pair.vector), grid)
    y_max = ycfg.get("y_max")
    if y_max is None:
        y_max = 1.5 * float(np.max(np.abs(grad)))
    ygrid = occupation.velocity_grid(mdl.dimension, float(y_max), int(ycfg.get("count", 21)))
    extgen, reward = occupation.build_extended(mdl, grid, ygrid, "neumann", tables=tables)
    mu = occupation.solve_occupation_lp(extgen, reward, tol=max(tol, 1e-9))

    gen_pol = eigensolve._policy_matrix(
        [discretize.build_generator(mdl, grid, k, "neumann", tables=tables)
         for k in range(mdl.n_controls)], policy)
    gv = discretize.GeneratorMatrix(matrix=gen_pol, boundary_condition="neumann",
                                    control_index=-1,
                                    active_index=np.arange(grid.n_total), grid=grid)
    c_v = tables.c[policy, np.arange(grid.n_total)]
    chain = twist.doob_transform(gv, c_v, pair)
    twist.stationary_distribution(chain)
    cand = occupation.candidate_measure(chain, policy, grid, ygrid, extgen, reward)

    labels, funcs = occupation.test_function_family(grid, phi_star=pair.vector)
    saddle = occupation.verify_saddle(extgen, reward, funcs, [mu, cand], labels=labels)

    _write_json(out_dir / "lp_report.json", {
        "lp_value": mu.objective,
        "lp_mass": mu.mass,
        "lp_stationarity_residual": mu.stationarity_residual,
        "eigenvalue": pair.value,
        "gap": abs(mu.objective - pair.value),
        "candidate": {"objective": cand.objective,
                      "stationarity_residual": cand.stationarity_residual},
        "saddle": saddle.as_dict(),
        "ygrid": {"count": ygrid.count, "y_max": ygrid.y_max},
    }, cfg, seed)
    if export_lp:
        _export_lp_text(export_lp, extgen, reward)
    print(f"lp: value={mu.objective!r} eigenvalue={pair.value!r} "
          f"gap={abs(mu.objective - pair.value):.4f}")
    return 0


def cmd_verify(cfg, out_dir: Path, seed: int, trace: bool = False) -> int:
    mdl = _resolve_model(cfg)
    grid, _ = _resolve_grid(cfg, mdl)
    tol = _tol(cfg)
    checks = []

    def check(name, passed, value, bound):
        checks.append({"name": name, "passed": bool(passed),
                       "value": float(value), "bound": float(bound)})

    tables = discretize.tabulate_fields(mdl, grid)
    gens = [discretize.build_generator(mdl, grid, k, "neumann", tables=tables)
            for k in range(mdl.n_controls)]
    pair, policy = eigensolve.solve_semilinear(mdl, grid, "neumann", tol, tables=tables)
    check("eigen_residual", pair.residual <= tol, pair.residual, tol)
    check("phi_positive", pair.vector.min() > 0, pair.vector.min(), 0.0)
    lo, up = eigensolve.collatz_wielandt_bounds(gens, tables, pair.vector)
    check("cw_sandwich_at_phi", lo - 1e-9 <= pair.value <= up + 1e-9, up - lo, 1e-9)

    A_v = eigensolve._policy_matrix(gens, policy)
    gv = discretize.GeneratorMatrix(matrix=A_v, boundary_condition="neumann",
                                    control_index=-1,
                                    active_index=np.arange(grid.n_total), grid=grid)
    c_v = tables.c[policy, np.arange(grid.n_total)]
    chain = twist.doob_transform(gv, c_v, pair)
    rows = np.abs(chain.rate_matrix @ np.ones(grid.n_total))
    row_bound = max(1e-8, pair.residual / pair.vector.min() * (1 + pair.vector.max()))
    check("doob_row_sums", rows.max() <= row_bound, rows.max(), row_bound)
    eta = twist.stationary_distribution(chain)
    stat = np.max(np.abs(chain.rate_matrix.T @ eta))
    check("stationarity", stat <= 1e-10, stat, 1e-10)
    rep = twist.entropy_report(chain, mdl, grid, c_v, pair)
    ident_bound = max(1e-8, 100 * pair.residual)
    check("entropy_identity", rep.identity_residual <= ident_bound,
          rep.identity_residual, ident_bound)
    inv_phi = 1.0 / pair.vector
    lyap = np.max(np.abs(chain.rate_matrix @ inv_phi - (c_v - pair.value) * inv_phi))
    lyap_bound = 10 * max(pair.residual, 1e-12) * inv_phi.max()
    check("lyapunov_identity", lyap <= lyap_bound, lyap, lyap_bound)
    prof = twist.gradient_bound_diagnostic(pair, mdl, grid)
    check("gradient_ratio_finite", np.isfinite(prof.max_ratio), prof.max_ratio, np.inf)
    slope = twist.growth_diagnostic(pair, grid)
    check("growth_slope_recorded", np.isfinite(slope), slope, np.inf)

    sim = _sim_config(cfg, seed, mdl)
    gp = montecarlo.GridPolicy.from_solution(grid, mdl.controls, policy,
                                             np.arange(grid.n_total))
    direct, S, XT = montecarlo.simulate_value(mdl, gp, sim, return_paths=True)
    check("mc_direct_agrees", abs(direct.value - pair.value)
          <= 3 * direct.standard_error + 0.05,
          abs(direct.value - pair.value), 3 * direct.standard_error + 0.05)
    twisted = montecarlo.twisted_value(mdl, gp, pair, grid, sim,
                                       direct_standard_error=direct.standard_error)
    check("mc_twisted_agrees", abs(twisted.value - pair.value)
          <= 3 * twisted.standard_error + 0.02,
          abs(twisted.value - pair.value), 3 * twisted.standard_error + 0.02)

    if trace:
        lines = [_config_comment(cfg, seed), "path,integral," +
                 ",".join(f"x{j}" for j in range(mdl.dimension)) + "\n"]
        for i in range(sim.paths):
            coords = ",".join(repr(float(v)) for v in XT[i])
            lines.append(f"{i},{repr(float(S[i]))},{coords}\n")
        (out_dir / "paths.csv").write_text("".join(lines))

    all_passed = all(c["passed"] for c in checks)
    _write_json(out_dir / "scorecard.json", {
        "checks": checks, "all_passed": all_passed,
        "eigenvalue": pair.value,
        "mc_direct": direct.as_dict(), "mc_twisted": twisted.as_dict(),
    }, cfg, seed)
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: "
              f"value={c['value']:.3e} bound={c['bound']:.3e}")
    return 0 if all_passed else 2


def cmd_minimize(cfg, out_dir: Path, seed: int) -> int:
    mdl = _resolve_model(cfg)
    if mdl.direction != "minimize":
        raise InvalidArgument("minimize command needs a direction=minimize model")
    grid, bc = _resolve_grid(cfg, mdl)
    tol = _tol(cfg)
    pair, policy = eigensolve.solve_semilinear(mdl, grid, bc, tol)
    report = model_mod.check_assumptions(mdl, grid, pair.value)

    tables = discretize.tabulate_fields(mdl, grid)
    sup = np.max(np.abs(grid.nodes), axis=1)
    shell = sup >= 0.9 * grid.radius - 1e-9 * grid.radius
    active = (np.arange(grid.n_total) if bc == "neumann"
              else discretize.build_generator(mdl, grid, 0, bc).active_index)
    cmin = tables.c.min(axis=0)
    coercivity_margin = float(cmin[shell].min() - pair.value)
    min_phi = float(pair.vector.min())

    lines = [_config_comment(cfg, seed),
             ",".join(f"x{j}" for j in range(mdl.dimension)) + ",control_index," +
             ",".join(f"xi{j}" for j in range(mdl.controls.shape[1])) + "\n"]
    for pos, node in enumerate(active):
        coords = ",".join(repr(float(v)) for v in grid.nodes[node])
        ctrl = ",".join(repr(float(v)) for v in mdl.controls[policy[pos]])
        lines.append(f"{coords},{int(policy[pos])},{ctrl}\n")
    (out_dir / "policy.csv").write_text("".join(lines))

    ok = coercivity_margin > 0 and min_phi > 0
    _write_json(out_dir / "minimize_report.json", {
        "value": pair.value, "residual": pair.residual,
        "min_vector": min_phi,
        "coercivity_margin": coercivity_margin,
        "coercive": coercivity_margin > 0,
        "a51_theta": report.a51_theta,
        "growth_constant": report.growth_constant,
    }, cfg, seed)
    print(f"minimize: value={pair.value!r} min_phi={min_phi:.3e} "
          f"coercivity_margin={coercivity_margin:.4f}")
    if not ok:
        print("minimize: assumption check failed (cost not coercive relative to "
              "the computed value); see minimize_report.json")
        return 2
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="rseig",
                                     description="risk-sensitive eigenvalue toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "sweep", "lp", "verify", "minimize"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=".")
        p.add_argument("--seed", type=int, default=None)
        if name == "solve":
            p.add_argument("--export-generator", default=None)
        if name == "lp":
            p.add_argument("--export-lp", default=None)
        if name == "verify":
            p.add_argument("--trace", action="store_true")
    args = parser.parse_args(argv)

    try:
        cfg = _load_config(args.config)
    except (OSError, json.JSONDecodeError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        seed = _seed(cfg, args.seed)
        if args.command == "solve":
            return cmd_solve(cfg, out_dir, seed, export_generator=args.export_generator)
        if args.command == "sweep":
            return cmd_sweep(cfg, out_dir, seed)
        if args.command == "lp":
            return cmd_lp(cfg, out_dir, seed, export_lp=args.export_lp)
        if args.command == "verify":
            return cmd_verify(cfg, out_dir, seed, trace=args.trace)
        if args.command == "minimize":
            return cmd_minimize(cfg, out_dir, seed)
    except ConvergenceError as err:
        print(f"{args.command}: numerical non-convergence: {err}", file=sys.stderr)
        return 2
    except (InvalidArgument, NotFound, KeyError, TypeError, ValueError) as err:
        print(f"{args.command}: config error: {err}", file=sys.stderr)
        return 1
    except RSEigError as err:
        print(f"{args.command}: {err}", file=sys.stderr)
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())
