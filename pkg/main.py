"""
SQG Forge - command-line driver
Alternating convex-integration construction for forced SQG in momentum form.
"""

import argparse
import sys
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import ValidationError

from services.config import TOOL_VERSION, get_output_root, get_threads, setup_logging
from services.field_io import SnapshotFormatError, write_snapshot
from services.geometry import DirectionSet, build_direction_sets, get_direction_sets, verify_direction_sets
from services.identities import run_identity_suite
from services.manifest import ManifestError, RunManifest, load_manifest
from services.params import ParameterConfig, ParameterError, TableMode, build_table, check_all
from services.reports import (
    export_dat,
    geometry_audit_text,
    inequality_frame,
    norm_frame,
    threshold_frame,
    write_csv,
)
from services.scheme import (
    beltrami_initial_flow,
    initialize,
    iterate_once,
    pressure_consistency,
    residual,
    residual_scale,
    scalar_consistency,
    scalar_recover,
    swap_roles,
    temporal_support_audit,
    update_masks_disjoint,
)
from services.session import RunSession
from services.spectral import Grid, set_fft_workers

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_IO = 3

RESIDUAL_TOLERANCE = 1e-11
SUPPORT_TOLERANCE = 1e-13


def _status(ok: bool) -> str:
    return "✅" if ok else "❌"


# ============ params ============

def cmd_params(args) -> int:
    config = ParameterConfig(a=args.a, b=args.b, beta=args.beta, smallness=args.smallness)
    table = build_table(config, args.qmax, TableMode.RIGOR)
    reports = check_all(table, config)
    out_dir = Path(args.output) if args.output else get_output_root() / "params"
    write_csv(inequality_frame(reports), out_dir / "inequalities.csv")
    thresholds = reports[0] if reports else None
    if thresholds is not None:
        write_csv(threshold_frame(thresholds), out_dir / "thresholds.csv")

    for report in reports:
        for r in report.records:
            print(f"{_status(r.holds)} q={r.q} {r.name}: ratio {r.ratio:.6g}")
    if thresholds is not None:
        for t in thresholds.thresholds:
            print(f"{_status(t.holds)} {t.name}({args.b}) = {t.value:.6g} vs β = {args.beta}")
    print(f"📁 Reports written to {out_dir}")
    ok = bool(reports) and all(r.all_hold for r in reports)
    return EXIT_PASS if ok else EXIT_FAIL


# ============ geometry ============

def _corrupted_sets() -> dict:
    """Direction families with Ω^1_1 overwritten by Ω^0_0 (negative control)."""
    sets = dict(build_direction_sets())
    sets[(1, 1)] = DirectionSet((1, 1), sets[(0, 0)].representatives)
    return sets


def cmd_geometry(args) -> int:
    sets = _corrupted_sets() if args.corrupt else build_direction_sets()
    checks = verify_direction_sets(sets)
    text = geometry_audit_text(sets, checks)
    print(text)
    if args.output:
        path = Path(args.output)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        print(f"📁 Audit written to {path}")
    ok = all(c.passed for c in checks)
    print(f"{_status(ok)} {sum(c.passed for c in checks)}/{len(checks)} exact checks pass")
    return EXIT_PASS if ok else EXIT_FAIL


# ============ run ============

def execute_run(manifest: RunManifest, out_dir: Path, session: RunSession) -> None:
    """Run every stage of a manifest, recording each one; domain errors end the run as a failed stage."""
    stage = "parameters"
    q = None
    try:
        table = manifest.table()
        config = manifest.parameter_config()
        reports = check_all(table, config)
        if reports:
            write_csv(inequality_frame(reports), out_dir / "inequalities.csv")
            write_csv(threshold_frame(reports[0]), out_dir / "thresholds.csv")
        diagnostic = manifest.mode is TableMode.DESK
        flags = {"thresholds": all(r.thresholds_hold for r in reports)}
        if not diagnostic:
            flags["inequalities"] = all(r.records_hold for r in reports)
        session.add_stage(
            stage,
            flags=flags,
            measurements={f"{r.name}_q{r.q}": r.ratio for report in reports for r in report.records},
        )

        stage = "geometry"
        checks = verify_direction_sets(get_direction_sets())
        session.add_stage(stage, flags={c.name: c.passed for c in checks})

        stage = "initialize"
        settings = manifest.settings()
        grid = Grid(manifest.n)
        V = beltrami_initial_flow(grid, manifest.profile(), seed=manifest.seed)
        state = initialize(V, manifest.zeta, table, settings=settings, nt=manifest.nt)
        session.add_stage(stage, q=0, flags=_residual_flags(state), measurements={"zeta": state.zeta})

        for q in range(manifest.steps):
            stage = "iterate"
            previous = state
            state, report = iterate_once(state, settings)
            write_csv(norm_frame(report.breakdown), out_dir / f"norms_q{q}.csv")
            flags = dict(report.identity_flags())
            flags["inactive_unchanged"] = np.array_equal(previous.inactive.coeffs, state.inactive.coeffs)
            flags["force_unchanged"] = state.force_terms is previous.force_terms
            flags.update(_residual_flags(state))
            cutoff, worst = temporal_support_audit(state)
            flags["temporal_support"] = worst <= SUPPORT_TOLERANCE
            measurements = report.measurements()
            measurements["support_cutoff"] = cutoff
            if q + 1 < table.qmax:
                measurements["masks_disjoint"] = float(
                    update_masks_disjoint(Grid(manifest.n), table.step(q), table.step(q + 1), settings.width)
                )
            session.add_stage(stage, q=q, flags=flags, measurements=measurements)
            _write_step_snapshots(state, report, manifest, out_dir, q)

            stage = "swap"
            swapped = swap_roles(state)
            twice = swap_roles(swapped)
            flags = {
                "force_increment": swapped.force_terms[-1] is state.R,
                "double_swap_identity": np.array_equal(twice.R.coeffs, state.R.coeffs)
                and len(twice.force_terms) == len(state.force_terms)
                and all(np.array_equal(a.coeffs, b.coeffs) for a, b in zip(twice.force_terms, state.force_terms)),
            }
            state = swapped
            flags.update(_residual_flags(state))
            session.add_stage(stage, q=q + 1, flags=flags)

            stage = "scalar"
            defects = scalar_consistency(state)
            pressure = pressure_consistency(state)
            session.add_stage(
                stage,
                q=q + 1,
                flags={
                    "scalar_u": defects["u"] < RESIDUAL_TOLERANCE,
                    "scalar_v": defects["v"] < RESIDUAL_TOLERANCE,
                    "pressure": pressure < RESIDUAL_TOLERANCE,
                },
                measurements={"scalar_u": defects["u"], "scalar_v": defects["v"], "pressure": pressure},
            )
    except ValueError as e:
        if isinstance(e, (ManifestError, ParameterError)):
            raise
        session.fail_stage(stage, e, q=q)


def _residual_flags(state) -> dict[str, bool]:
    out = {}
    for which in ("active", "inactive"):
        scale = max(residual_scale(state, which), 1e-300)
        out[f"residual_{which}"] = residual(state, which) / scale < RESIDUAL_TOLERANCE
    return out


def _write_step_snapshots(state, report, manifest: RunManifest, out_dir: Path, q: int) -> None:
    j = manifest.dump_sample
    t = float(state.timegrid.times[j])
    snaps = out_dir / "snapshots"
    write_snapshot(snaps / f"v_q{q + 1}.sqgf", state.v.sample(j), t)
    write_snapshot(snaps / f"u_q{q + 1}.sqgf", state.u.sample(j), t)
    write_snapshot(snaps / f"R_q{q + 1}.sqgf", state.R.sample(j), t)
    recovery = scalar_recover(state)
    write_snapshot(snaps / f"theta_v_q{q + 1}.sqgf", recovery.theta_v.sample(j), t)
    for i, flow in sorted(report.flows.items()):
        if len(flow.times):
            write_snapshot(snaps / f"flow_q{q}_i{i}.sqgf", flow.displacement[0], float(flow.times[0]))
    if manifest.keep_pieces and report.perturbation is not None:
        for (i, r), piece in sorted(report.perturbation.pieces.items()):
            write_snapshot(snaps / f"piece_q{q}_i{i}_k{r}.sqgf", piece, t)


def cmd_run(args) -> int:
    manifest = load_manifest(Path(args.config))
    out_dir = Path(args.output) if args.output else get_output_root() / manifest.config_hash[:12]
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.conf").write_text(manifest.to_text(), encoding="utf-8")
    print(f"🚀 Run {manifest.config_hash[:12]} (n={manifest.n}, steps={manifest.steps}, mode={manifest.mode.value})")

    session = RunSession(
        config_hash=manifest.config_hash,
        tool_version=TOOL_VERSION,
        seed=manifest.seed,
        manifest_text=manifest.to_text(),
    )
    execute_run(manifest, out_dir, session)
    (out_dir / "summary.json").write_text(session.summary_json(), encoding="utf-8")
    (out_dir / "transcript.txt").write_text(session.get_transcript_text(), encoding="utf-8")

    for s in session.stages:
        q = "" if s.q is None else f" q={s.q}"
        print(f"{_status(s.status.value == 'passed')} {s.name}{q}")
    for failure in session.failed_flags():
        print(f"⚠️ {failure}")
    print(f"📁 Artifacts written to {out_dir}")
    return EXIT_PASS if session.passed else EXIT_FAIL


# ============ check-identities ============

def cmd_check_identities(args) -> int:
    checks = run_identity_suite(args.n, args.seed, args.samples)
    for c in checks:
        print(f"{_status(c.passed)} {c.name}: {c.residual:.3e} (< {c.tolerance:.0e})")
    ok = all(c.passed for c in checks)
    return EXIT_PASS if ok else EXIT_FAIL


# ============ report ============

def cmd_report(args) -> int:
    written = export_dat(Path(args.run_dir))
    for path in written:
        print(f"📁 {path}")
    return EXIT_PASS


# ============ Entry point ============

def _power_of_two(text: str) -> int:
    value = int(text)
    if value < 8 or value & (value - 1):
        raise argparse.ArgumentTypeError(f"n must be a power of two >= 8, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sqgforge", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--threads", type=int, default=None, help="FFT workers (default: $SQGFORGE_THREADS or 1)")
    parser.add_argument("--log-level", default=None, help="logging level (default: $SQGFORGE_LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("params", help="check the parameter inequalities in rigor mode")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--b", type=float, required=True)
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--qmax", type=int, default=6)
    p.add_argument("--smallness", type=float, default=0.1)
    p.add_argument("--output", default=None)
    p.set_defaults(handler=cmd_params)

    p = sub.add_parser("geometry", help="exact audit of the direction families")
    p.add_argument("--output", default=None)
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(handler=cmd_geometry)

    p = sub.add_parser("run", help="run the iteration described by a manifest")
    p.add_argument("config")
    p.add_argument("--output", default=None)
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("check-identities", help="operator identity suite on random fields")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--n", type=_power_of_two, default=256)
    p.add_argument("--samples", type=int, default=100)
    p.set_defaults(handler=cmd_check_identities)

    p = sub.add_parser("report", help="gnuplot columns for every CSV of a run directory")
    p.add_argument("run_dir")
    p.set_defaults(handler=cmd_report)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_PASS if e.code == 0 else EXIT_USAGE

    setup_logging(args.log_level)
    try:
        set_fft_workers(get_threads(args.threads))
        return args.handler(args)
    except (ManifestError, ParameterError, ValidationError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, SnapshotFormatError) as e:
        print(f"❌ I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        # thread count and other argument-level values
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
