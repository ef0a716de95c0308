import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence

import questionary
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from .config import ConfigFactory, RunConfig
from .contracts import ConfigError, InvalidArgumentError, SolverError, VerificationError
from .geometry import ScalarField, available_groups
from .interop import format_value, write_field
from .orchestrator.executor import ThreadExecutor
from .orchestrator.manager import ExperimentManager
from .structures import SOLVE_COLUMNS, STAGE_COLUMNS

console = Console()
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_VERIFY = 4

COMMANDS = ("solve", "continuation", "eig", "singular", "oracle", "verify", "sweep")


def _setup_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper()),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False, rich_tracebacks=False)],
        force=True,
    )


def _table(title: str, columns: Sequence[str], rows: Iterable[Dict[str, Any]]) -> Table:
    table = Table(title=title, show_lines=False)
    for c in columns:
        table.add_column(c, style="cyan" if c == columns[0] else None)
    for row in rows:
        table.add_row(*(format_value(row[c]) if isinstance(row[c], float) else str(row[c]) for c in columns))
    return table


def load_config(args: argparse.Namespace) -> RunConfig:
    if args.config:
        config = ConfigFactory.load_run_config(args.config)
    else:
        logger.info("No --config given; using the built-in defaults")
        config = RunConfig()
    if args.out:
        config.output.dir = args.out
    if args.seed is not None:
        config.seed = args.seed
    return config


def init_config(target: Path, quiet: bool) -> None:
    """Write a starter config, asking for the main fields unless quiet."""
    config = RunConfig()
    if not quiet:
        group = questionary.select("Group:", choices=list(available_groups()), default=config.group).ask()
        lam = questionary.text("lambda:", default="60").ask()
        beta = questionary.text("beta:", default=str(config.model.beta)).ask()
        resolution = questionary.text("Nodes per axis:", default="129").ask()
        if group is None or lam is None or beta is None or resolution is None:
            console.print("[yellow]⚠️ Aborted.[/yellow]")
            sys.exit(EXIT_CONFIG)
        data = {"group": group, "model": {"lambda": float(lam), "beta": float(beta)}, "domain": {"resolution": int(resolution)}}
    else:
        data = {"model": {"lambda": 60.0, "beta": config.model.beta}, "domain": {"resolution": 129}}
    config = ConfigFactory.from_dict(data)
    if target.exists():
        console.print(f"[bold red]❌ {target} already exists.[/bold red]")
        sys.exit(EXIT_CONFIG)
    ConfigFactory.dump(config, target)
    console.print(f"[green]✅ Wrote {target} (config_hash={config.config_hash()})[/green]")


def _dump_last_iterate(error: SolverError, config: RunConfig) -> None:
    if isinstance(error.last_iterate, ScalarField):
        path = write_field(Path(config.output.dir) / "failed_iterate.csv", error.last_iterate, config.config_hash())
        console.print(f"[yellow]⚠️ Last iterate written to {path}[/yellow]")


def _run(command: str, manager: ExperimentManager) -> int:
    if command == "eig":
        eig = manager.run_eig()
        console.print(f"[bold]lambda_1[/bold] = {eig.lambda1:.12g}  ({eig.iterations} iterations)")
    elif command == "singular":
        sol = manager.run_singular()
        console.print(f"[bold]sup u_beta[/bold] = {sol.u_beta.values.max():.12g}  residual {sol.residual_norm:.2e}")
    elif command == "solve":
        _, rep0, _, rep1 = manager.run_solve()
        console.print(_table("Solve", SOLVE_COLUMNS, [rep0.as_row(), rep1.as_row()]))
    elif command == "continuation":
        result = manager.run_continuation()
        console.print(_table("Continuation stages", STAGE_COLUMNS, [s.as_row() for s in result.stages]))
    elif command == "oracle":
        summary = manager.run_oracle()
        for key, value in summary.items():
            console.print(f"  {key}: {value}")
    elif command == "sweep":
        out = manager.run_sweep()
        columns = ["beta", "beta_star", "lambda_lo", "lambda_hi", "pair_lambda", "E_u0", "E_u1", "sup_distance"]
        console.print(_table("lambda* brackets", columns, out["brackets"]))
    elif command == "verify":
        audit = manager.run_verify()
        console.print(_table("Invariant audit", ["check", "value", "rule", "passed", "message"], audit.rows()))
        audit.raise_if_failed()
        console.print("[bold green]✅ All invariants hold[/bold green]")
    console.print(f"[dim]Results in {manager.out_dir}[/dim]")
    return EXIT_OK


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration.")
    common.add_argument("--out", help="Output directory (overrides output.dir).")
    common.add_argument("--threads", type=int, help="Worker threads (default: CARNOT_FBP_THREADS or CPU count).")
    common.add_argument("--seed", type=int, help="Random seed (overrides seed).")
    common.add_argument("--log-level", choices=["info", "debug"], default="info")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="carnot-fbp",
        description="Two-solution free boundary problems with a singular term on stratified groups.",
    )
    subparsers = parser.add_subparsers(dest="command", help="Available commands")
    common = _common_parser()
    helps = {
        "solve": "Minimizer and mountain-pass solution at a single eps.",
        "continuation": "eps-continuation of the solution pair with stage diagnostics.",
        "eig": "Principal eigenpair of the sub-Laplacian.",
        "singular": "Singular auxiliary solution u_beta and the beta* estimate.",
        "oracle": "1-D shooting reference profiles.",
        "verify": "Full invariant suite; nonzero exit on any failure.",
        "sweep": "lambda (and beta) sweep of m1 with the lambda* bracket.",
    }
    for name in COMMANDS:
        subparsers.add_parser(name, parents=[common], help=helps[name])

    parser_init = subparsers.add_parser("init", help="Write a starter configuration.")
    parser_init.add_argument("path", nargs="?", default="carnot.yaml", help="Target file (default: carnot.yaml).")
    parser_init.add_argument("--quiet", action="store_true", help="Non-interactive mode.")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == "init":
        init_config(Path(args.path), args.quiet)
        return EXIT_OK
    if args.command not in COMMANDS:
        parser.print_help()
        return EXIT_OK

    _setup_logging(args.log_level)
    try:
        config = load_config(args)
    except ConfigError as e:
        console.print(f"[bold red]❌ Config error: {e}[/bold red]")
        return EXIT_CONFIG

    try:
        with ThreadExecutor(args.threads) as executor:
            logger.info(f"{args.command}: {config.group} grid {config.domain.resolution}, {executor.max_workers} thread(s)")
            manager = ExperimentManager(config, executor, Path(config.output.dir))
            return _run(args.command, manager)
    except (ConfigError, InvalidArgumentError) as e:
        console.print(f"[bold red]❌ Invalid configuration: {e}[/bold red]")
        return EXIT_CONFIG
    except SolverError as e:
        stage = f" (stage {e.stage})" if e.stage is not None else ""
        console.print(f"[bold red]❌ Solver failure{stage}: {e}[/bold red]")
        _dump_last_iterate(e, config)
        return EXIT_SOLVER
    except VerificationError as e:
        console.print(f"[bold red]❌ Verification failed: {e}[/bold red]")
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
