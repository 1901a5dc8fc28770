"""Batch front-end: ``squeeze-spectra <command> --config run.json --out dir``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure (a
``diagnostic.json`` is written next to the other outputs).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pydantic
import scipy

from . import __version__
from .config import RunConfig, load_config
from .errors import (
    CertificationError,
    CutSelectionError,
    DissipativityError,
    DomainError,
    FactorizationError,
    GapViolationError,
    GeometryError,
    IntegrationError,
    InvalidProfileError,
    NotFoundError,
    NumericError,
    ShapeError,
)

log = logging.getLogger("squeeze_spectra")

COMMANDS = ("spectrum", "certify", "converge", "simulate", "manifold", "coarea-check")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

_CONFIG_ERRORS = (pydantic.ValidationError, json.JSONDecodeError, OSError, InvalidProfileError, GeometryError, ShapeError, DomainError)
_NUMERIC_ERRORS = (
    NumericError,
    FactorizationError,
    IntegrationError,
    CertificationError,
    GapViolationError,
    CutSelectionError,
    DissipativityError,
    NotFoundError,
    np.linalg.LinAlgError,
    ArithmeticError,
)


class ConfigError(Exception):
    pass


def write_atomic(path: Path, text: str) -> None:
    """Write through a temporary file in the target directory, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def _rows_csv(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(x if isinstance(x, str) else (str(x) if isinstance(x, (int, np.integer)) else f"{x:.17g}") for x in row))
    return "\n".join(lines) + "\n"


class Outputs:
    """Collects artifacts of one run; each file is written atomically."""

    def __init__(self, root: Path, formats):
        self.root = root
        self.formats = set(formats)
        self.files: dict[str, str] = {}

    def put(self, name: str, text: str) -> None:
        kind = name.rsplit(".", 1)[-1]
        if kind in ("csv", "json") and kind not in self.formats:
            return
        write_atomic(self.root / name, text)
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------------------
# commands


def cmd_spectrum(cfg: RunConfig, out: Outputs, workers: int) -> None:
    from .spectral import assemble_circle_operator, eigendecompose

    op = assemble_circle_operator(cfg.profile.build(), cfg.geom(), cfg.discretization.N)
    dec = eigendecompose(op, cfg.discretization.eig_count)
    out.put("spectrum.csv", dec.to_csv())
    out.put(
        "spectrum.json",
        dump_json({"eigenvalues": dec.eigenvalues.tolist(), "clusters": dec.clusters.tolist(), "meta": dec.meta}),
    )


def cmd_certify(cfg: RunConfig, out: Outputs, workers: int) -> None:
    from .gap import certify
    from .spectral import assemble_circle_operator, eigendecompose, self_convergence_error

    profile, geom = cfg.profile.build(), cfg.geom()
    spectrum = tol = None
    if geom.n == 2:
        count = min(cfg.discretization.eig_count, cfg.discretization.N)
        spectrum = eigendecompose(assemble_circle_operator(profile, geom, cfg.discretization.N), count)
        tol = cfg.certify.tolerance_factor * self_convergence_error(profile, geom, cfg.discretization.N, count)
    try:
        cert = certify(
            profile,
            geom.n,
            geom.r,
            spectrum,
            horizon=cfg.certify.horizon,
            check_max_nu=cfg.certify.check_max_nu,
            tolerances=tol,
        )
    except CertificationError as exc:
        out.put("certificate_violations.json", dump_json({"violations": [list(v) for v in exc.violations]}))
        raise
    out.put("certificate.json", cert.to_json() + "\n")


def cmd_converge(cfg: RunConfig, out: Outputs, workers: int) -> None:
    from .thin_domain import convergence_csv, convergence_study

    rows = convergence_study(
        cfg.profile.build(),
        cfg.geom(),
        cfg.sweep.eps_list,
        j_max=cfg.sweep.j_max,
        n_theta=cfg.discretization.N_theta,
        n_s=cfg.discretization.N_s,
        workers=workers,
    )
    out.put("convergence.csv", convergence_csv(rows))


def cmd_simulate(cfg: RunConfig, out: Outputs, workers: int) -> None:
    from .manifold import NONLINEARITIES
    from .thin_domain import assemble_thin_operator, simulate

    sc = cfg.simulate
    op = assemble_thin_operator(cfg.profile.build(), cfg.geom(), sc.eps, cfg.discretization.N_theta, cfg.discretization.N_s)
    G, _ = NONLINEARITIES[cfg.nonlinearity.kind](cfg.nonlinearity.lambda_)
    rng = np.random.default_rng(cfg.seed)
    u0 = sc.amplitude * rng.standard_normal(op.size)
    traj = simulate(op, G, u0, sc.T, sc.dt, sc.sample_every, sc.snapshot_times)
    out.put("trajectory.csv", traj.to_csv())
    if traj.snapshots:
        ii, kk = op.logical_nodes()
        rows = []
        for t, u in sorted(traj.snapshots.items()):
            rows.extend((t, int(i), int(k), float(v)) for i, k, v in zip(ii.ravel(), kk.ravel(), u))
        out.put("snapshots.csv", _rows_csv(["t", "i_theta", "k_s", "u"], rows))


def cmd_manifold(cfg: RunConfig, out: Outputs, workers: int) -> None:
    from .manifold import (
        NONLINEARITIES,
        build_reduced_model,
        compare_reduced_fields,
        invariance_residual,
        lp_graph_eval,
        prepare_nonlinearity,
        reduced_trajectory,
    )
    from .spectral import assemble_circle_operator, eigendecompose

    mc = cfg.manifold
    profile, geom = cfg.profile.build(), cfg.geom()
    op = assemble_circle_operator(profile, geom, mc.N_grid)
    dec = eigendecompose(op, min(max(mc.J + 2, cfg.discretization.eig_count), mc.N_grid))
    G, dG = NONLINEARITIES[cfg.nonlinearity.kind](cfg.nonlinearity.lambda_)
    nl = prepare_nonlinearity(G, dG, cfg.nonlinearity.delta0, cfg.nonlinearity.beta, dec, op.mass, J=mc.J, seed=cfg.seed)
    model = build_reduced_model(
        dec, op.mass, nl, nu=mc.nu, K_gap=mc.K_gap, J=mc.J, T=mc.T, picard=mc.picard_M, steps=mc.lp_steps
    )
    log.info("cut nu = %d, gap = %.6g, L = %.6g, R = %.6g", model.nu, model.gap, nl.L, nl.R)
    xis = np.array(mc.xi_samples, dtype=float)
    xi0 = np.array(mc.xi0, dtype=float)
    if xis.shape[-1] != model.nu or xi0.shape != (model.nu,):
        raise ConfigError(f"xi0 and xi_samples must have {model.nu} components for the selected cut")

    lp = lp_graph_eval(np.vstack([xi0, xis]), model, nl)
    inv = invariance_residual(model, nl, xi0, horizon=mc.horizon)

    def job(eps):
        return compare_reduced_fields(profile, geom, nl, eps, model.nu, xis, n_theta=mc.N_grid, n_s=mc.N_s, limit_model=model)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        discrepancies = [row for rows in pool.map(job, mc.compare_eps) for row in rows]

    report = {
        "nu": model.nu,
        "gap": model.gap,
        "L": nl.L,
        "R": nl.R,
        "J": model.J,
        "T": model.T,
        "contraction_ratios": lp.ratios.T.tolist(),
        "residual_series": {"t": inv.t.tolist(), "residual": inv.residual.tolist()},
        "field_discrepancies": discrepancies,
    }
    out.put("manifold.json", dump_json(report))
    t, traj = reduced_trajectory(model, nl, xi0, mc.horizon, mc.reduced_dt)
    header = ["t"] + [f"xi_{j + 1}" for j in range(model.nu)]
    out.put("reduced_trajectory.csv", _rows_csv(header, np.column_stack([t, traj])))


def cmd_coarea(cfg: RunConfig, out: Outputs, workers: int) -> None:
    from .geometry import coarea_check

    profile, geom = cfg.profile.build(), cfg.geom()
    r = geom.r
    cases = {
        "one": lambda p: np.ones(p.shape[:-1]),
        "radial_offset": lambda p: np.linalg.norm(p, axis=-1) - r,
        "band_limited": lambda p: (1 + 0.5 * np.cos(3 * np.arctan2(p[..., 1], p[..., 0])))
        * (1 + np.linalg.norm(p, axis=-1) ** 2)
        + p[..., 0] ** 2,
    }
    rows = []
    for name, g in cases.items():
        res = coarea_check(g, profile, geom, cfg.coarea.n_theta, cfg.coarea.n_cells)
        rows.append({"case": name, "lhs": res.lhs, "rhs": res.rhs, "diff": res.diff})
    out.put("coarea.json", dump_json({"cases": rows}))


HANDLERS = {
    "spectrum": cmd_spectrum,
    "certify": cmd_certify,
    "converge": cmd_converge,
    "simulate": cmd_simulate,
    "manifold": cmd_manifold,
    "coarea-check": cmd_coarea,
}


# ---------------------------------------------------------------------------


def _workers(arg) -> int:
    if arg is not None:
        return arg
    env = os.environ.get("SQUEEZE_SPECTRA_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"SQUEEZE_SPECTRA_WORKERS must be an integer, got {env!r}") from None
    return 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="squeeze-spectra", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON run configuration (defaults if omitted)")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--workers", type=int, help="worker threads for independent jobs")
    p.add_argument("--verbose", "-v", action="store_true")
    return p


def _manifest(cfg, command, out, wall, started, status, workers):
    return {
        "command": command,
        "status": status,
        "config_sha256": cfg.digest() if cfg is not None else None,
        "config": json.loads(cfg.to_json()) if cfg is not None else None,
        "outputs": dict(sorted(out.files.items())),
        "versions": {
            "squeeze_spectra": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pydantic": pydantic.VERSION,
        },
        "workers": workers,
        "started_at": started,
        "wall_time_s": wall,
    }


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    cfg = None
    out_dir = Path(args.out) if args.out else None
    try:
        cfg = load_config(args.config)
        workers = _workers(args.workers)
    except (ConfigError, *_CONFIG_ERRORS) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Outputs(out_dir or Path(cfg.output.dir), cfg.output.formats)

    status, code = "ok", EXIT_OK
    try:
        HANDLERS[args.command](cfg, out, workers)
    except (ConfigError, InvalidProfileError, GeometryError, ShapeError, DomainError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        status, code = "config_error", EXIT_CONFIG
    except _NUMERIC_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        diag = {"command": args.command, "error": type(exc).__name__, "message": str(exc)}
        out.put("diagnostic.json", dump_json(diag))
        status, code = "numerical_failure", EXIT_NUMERIC
    wall = time.perf_counter() - t0
    write_atomic(out.root / "manifest.json", dump_json(_manifest(cfg, args.command, out, wall, started, status, workers)))
    log.info("%s finished in %.2f s (%s)", args.command, wall, status)
    return code


if __name__ == "__main__":
    sys.exit(main())
