"""
btn-sim command line
Entry point for run, steady, sweep and verify
"""

import argparse
import asyncio
import logging
import os
import sys
import time
from typing import List, Optional, Sequence

from btnsim import __version__
from btnsim.analysis import dissipation_check, lemma_ratio_ledger
from btnsim.config import settings
from btnsim.database import close_database, get_database
from btnsim.dynamics import run
from btnsim.error_handlers import BTNError, ValidationError, categorize_error, get_error
from btnsim.outputs import OutputWriter, RunManifest
from btnsim.scenario import SimulationConfig, parse_config, serialize_config
from btnsim.steady import bisect_kappa_threshold, run_sweep, solve_steady
from btnsim.verify import CHECK_NAMES, SWEEP_KAPPAS, run_checks, suite_passed


logger = logging.getLogger(__name__)

COMMANDS = ('run', 'steady', 'sweep', 'verify')


def setup_logging() -> None:
    """Configure root logging to stderr (plus BTN_LOG_FILE when set)."""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if settings.LOG_FILE:
        handlers.append(logging.FileHandler(settings.LOG_FILE))
    logging.basicConfig(
        level=getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def log_startup(command: str, out_dir: str) -> None:
    """Log startup information."""
    logger.info("=" * 60)
    logger.info(f"btn-sim {__version__} - {command}")
    logger.info("=" * 60)
    logger.info(f"  - Output dir: {out_dir}")
    for key, value in settings.to_dict().items():
        logger.info(f"  - {key}: {value}")
    logger.info("=" * 60)


def parse_kappas(text: str) -> List[float]:
    """Comma-separated list of positive kappas."""
    try:
        kappas = [float(item) for item in text.split(',') if item.strip()]
    except ValueError:
        raise ValidationError('kappas', f"expected comma-separated numbers, got {text!r}") from None
    if not kappas:
        raise ValidationError('kappas', "at least one kappa is required")
    return kappas


def load_config(path: Optional[str]) -> SimulationConfig:
    """Scenario from a key = value file; defaults when no path is given."""
    if not path:
        return SimulationConfig()
    with open(path, 'r', encoding='utf-8') as f:
        text = f.read()
    cfg = parse_config(text)
    logger.info(f"Loaded scenario {path} ({cfg.fingerprint()[:12]})")
    return cfg


def _manifest(command: str, cfg: SimulationConfig, started: float, **extra) -> RunManifest:
    return RunManifest(
        command=command,
        version=__version__,
        grid_hash=cfg.grid.fingerprint(),
        config_fingerprint=cfg.fingerprint(),
        config=serialize_config(cfg),
        duration=round(time.perf_counter() - started, 3),
        extra=extra,
    )


async def _register(manifest: RunManifest, out_dir: str) -> None:
    if not settings.ENABLE_REGISTRY:
        return
    try:
        db = await get_database()
        run_id = await db.record_run(manifest.to_dict(), out_dir)
        logger.info(f"Registered {manifest.command} as run #{run_id}")
    except Exception as e:
        logger.warning(f"Registry unavailable, run not recorded: {e}")


# ===== COMMANDS =====

async def cmd_run(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    cfg = load_config(args.config)
    writer = OutputWriter(args.out)

    snapshot_dir = None
    if cfg.snapshot:
        snapshot_dir = writer.path('snapshots')
        os.makedirs(snapshot_dir, exist_ok=True)

    result = run(cfg, snapshot_dir=snapshot_dir)
    writer.track(result.snapshots)
    writer.trajectory(result.trajectory)
    ledger = lemma_ratio_ledger(result.trajectory, cfg.kappa)
    writer.ledger(ledger)

    final = result.final_state
    writer.snapshot('m1.btnf', final.m.m1)
    writer.snapshot('m2.btnf', final.m.m2)
    writer.snapshot('p.btnf', final.p)

    summary = {
        't_end': final.t,
        'steps': final.step_index,
        'flagged_steps': result.flagged_steps,
        'max_energy_increase': result.max_energy_increase,
        'ledger_maxima': ledger.final_maxima(),
    }
    if len(result.trajectory) >= 2:
        report = dissipation_check(result.trajectory)
        summary['dissipation'] = {
            'max_violation': report.max_violation,
            'max_abs_violation': report.max_abs_violation,
            'correlation': report.correlation,
        }
    writer.summary('summary.json', summary)

    manifest = _manifest('run', cfg, started, flagged_steps=result.flagged_steps)
    writer.manifest(manifest)
    await _register(manifest, args.out)
    print(f"run: {final.step_index} steps to t={final.t:.6g}, outputs in {args.out}")
    return 0


async def cmd_steady(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    cfg = load_config(args.config)
    writer = OutputWriter(args.out)

    result = solve_steady(cfg)
    writer.snapshot('m1_inf.btnf', result.m_inf.m1)
    writer.snapshot('m2_inf.btnf', result.m_inf.m2)
    writer.snapshot('p_inf.btnf', result.p_inf)
    writer.summary('steady.json', result.summary())

    manifest = _manifest('steady', cfg, started, converged=result.converged)
    writer.manifest(manifest)
    await _register(manifest, args.out)
    print(
        f"steady: converged={result.converged} residual={result.residual:.3e} "
        f"|m_inf|={result.m_inf_linf:.3e}, outputs in {args.out}"
    )
    return 0


async def cmd_sweep(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    cfg = load_config(args.config)
    kappas = parse_kappas(args.kappas) if args.kappas else list(SWEEP_KAPPAS)
    bracket = parse_kappas(args.bisect) if args.bisect else None
    if bracket is not None and len(bracket) != 2:
        raise ValidationError('bisect', f"expected 'lo,hi', got {args.bisect!r}")
    writer = OutputWriter(args.out)

    report = await run_sweep(cfg, kappas, workers=args.workers, use_cache=settings.ENABLE_RESULT_CACHE)
    writer.sweep(report.rows)
    extra = {'crossover_kappa': report.crossover_kappa}

    if bracket is not None:
        estimate = bisect_kappa_threshold(cfg, bracket[0], bracket[1])
        writer.summary('threshold.json', {
            'kappa_lo': estimate.kappa_lo,
            'kappa_hi': estimate.kappa_hi,
            'estimate': estimate.estimate,
            'bracketed': estimate.bracketed,
            'evaluations': estimate.evaluations,
        })
        extra['threshold'] = estimate.estimate if estimate.bracketed else None

    manifest = _manifest('sweep', cfg, started, **extra)
    writer.manifest(manifest)
    await _register(manifest, args.out)
    print(f"sweep: {len(report.rows)} kappas, crossover {report.crossover_kappa}, outputs in {args.out}")
    return 0


async def cmd_verify(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    cfg = load_config(args.config)
    names = [name.strip() for name in args.checks.split(',') if name.strip()] if args.checks else None
    writer = OutputWriter(args.out)

    results = run_checks(names, quick=args.quick)
    writer.verify(results)
    passed = suite_passed(results)

    manifest = _manifest('verify', cfg, started, quick=args.quick, passed=passed)
    writer.manifest(manifest)
    await _register(manifest, args.out)

    for result in results:
        status = 'PASS' if result.passed else ('FAIL' if result.required else 'INFO')
        print(f"{status:4} {result.name:28} {result.elapsed:8.2f}s  {result.detail}")

    if not passed:
        failed = [r.name for r in results if r.required and not r.passed]
        error = get_error('VERIFY_FAILED', f"required checks failed: {', '.join(failed)}")
        print(error.to_line(), file=sys.stderr)
        return error.exit_code
    logger.info("✅ All required checks passed")
    return 0


class CommandParser(argparse.ArgumentParser):
    """Usage errors become ValidationError so they share the BTN-ERR line and exit code 1."""

    def error(self, message: str) -> None:
        raise ValidationError('usage', f"{self.prog}: {message}")


HANDLERS = {
    'run': cmd_run,
    'steady': cmd_steady,
    'sweep': cmd_sweep,
    'verify': cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = CommandParser(
        prog='btn-sim',
        description='Biological transport network simulator and verification harness',
    )
    parser.add_argument('--version', action='version', version=f"btn-sim {__version__}")
    sub = parser.add_subparsers(dest='command', required=True)

    for name, help_text in (
        ('run', 'simulate one scenario and write the trajectory'),
        ('steady', 'compute a stationary state by pseudo-time continuation'),
        ('sweep', 'steady states and decay rates over a list of kappas'),
        ('verify', 'run the acceptance suite'),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument(
            '--config', metavar='PATH', required=name != 'verify',
            help='scenario file (key = value lines)' + ('; defaults when omitted' if name == 'verify' else ''),
        )
        cmd.add_argument('--out', metavar='DIR', help='output directory')
        if name == 'sweep':
            cmd.add_argument('--kappas', metavar='LIST', help='comma-separated kappas')
            cmd.add_argument('--bisect', metavar='LO,HI', help='also bisect the semi-trivial threshold in [LO, HI]')
            cmd.add_argument('--workers', type=int, default=None, help='process pool size (default BTN_SWEEP_WORKERS)')
        if name == 'verify':
            cmd.add_argument('--quick', action='store_true', help='reduced grids and horizons')
            cmd.add_argument('--checks', metavar='NAMES', help=f"subset of: {', '.join(CHECK_NAMES)}")

    return parser


async def dispatch(args: argparse.Namespace) -> int:
    """Run one command; any failure becomes a single BTN-ERR line and an exit code."""
    try:
        return await HANDLERS[args.command](args)
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return 130
    except Exception as e:
        error = categorize_error(e)
        if isinstance(e, BTNError):
            logger.error(f"{args.command} failed: {error.technical_message}: {e}")
        else:
            logger.critical(f"{args.command} failed: {e}", exc_info=True)
        print(error.to_line(), file=sys.stderr)
        return error.exit_code
    finally:
        await close_database()


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ValidationError as e:
        error = categorize_error(e)
        print(error.to_line(), file=sys.stderr)
        return error.exit_code
    if not args.out:
        args.out = os.path.join(settings.OUTPUT_DIR, args.command)

    setup_logging()
    log_startup(args.command, args.out)
    return asyncio.run(dispatch(args))


if __name__ == '__main__':
    sys.exit(main())
