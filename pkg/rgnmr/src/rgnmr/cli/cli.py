# Copyright (c) Microsoft Corporation.
# Licensed under the MIT License.
import logging
import traceback
from enum import IntEnum
from pathlib import Path
from typing import Annotated, Optional

import typer
import yaml
from pydantic import BaseModel, ValidationError
from rich import print as rich_print

from rgnmr.configs.load import load_sweep
from rgnmr.errors import (
    IllPosedProblemError,
    InfeasibleSamplingError,
    InvalidArgumentError,
    SolverConvergenceError,
)
from rgnmr.gn_step import InnerSolveOptions
from rgnmr.ksearch import run_with_estimated_k
from rgnmr.matrix_market import read_matrix_market, write_dense_matrix_market
from rgnmr.obs_model import ObservationSet
from rgnmr.simulation.bench import run_bench
from rgnmr.simulation.metrics import summarize_frame
from rgnmr.simulation.plots import summary_svg
from rgnmr.simulation.records import read_records_frame, records_to_frame, write_records_csv
from rgnmr.simulation.sweep import Variant, run_sweep
from rgnmr.solver import SolveOptions, SolveResult, SolveStatus, run
from rgnmr.theory.modified import run_modified
from rgnmr.theory.params import TheoryParams
from rgnmr.theory.spectral import estimate_spectrum, spectral_init
from rgnmr.utils.environment import get_default_seed, get_log_level

logging.basicConfig(level=get_log_level())

cli = typer.Typer(pretty_exceptions_show_locals=False, no_args_is_help=True)


class ExitCode(IntEnum):
    SUCCESS = 0
    USAGE = 1
    NOT_CONVERGED = 2
    ILL_POSED = 3


STATUS_EXIT_CODES = {
    SolveStatus.CONVERGED: ExitCode.SUCCESS,
    SolveStatus.MAX_ITERATIONS: ExitCode.NOT_CONVERGED,
    SolveStatus.ILL_POSED: ExitCode.ILL_POSED,
}


class CompletionDiagnostics(BaseModel):
    """One JSON-lines record written by `complete`."""

    input: str
    rank: int
    variant: Variant
    k: int
    k_hat: Optional[int] = None
    status: SolveStatus
    iterations: int
    relative_residual: Optional[float] = None
    lambda_stabilized: bool


def _fail(message: str, code: ExitCode = ExitCode.USAGE) -> typer.Exit:
    rich_print("RGNMR Failed ❌")
    rich_print(message)

    return typer.Exit(code=int(code))


def _run_modified(
    obs: ObservationSet,
    rank: int,
    k: int,
    max_iters: int,
    mu: Optional[float],
    alpha: Optional[float],
    gamma: float,
    delta: Optional[float],
    tol: float,
    seed: int,
) -> SolveResult:
    params = TheoryParams(
        mu=mu or max(obs.shape) / rank,
        alpha=alpha if alpha is not None else min(k / obs.size, 0.5),
        gamma=gamma,
        delta=delta,
        p=obs.sampling_rate,
    )
    init = spectral_init(obs, rank, params)
    params = params.with_spectrum(*estimate_spectrum(init))

    return run_modified(
        obs, rank, params, max_iters, init, InnerSolveOptions(seed=seed), tolerance=tol
    )


@cli.command()
def complete(
    input_path: Annotated[
        Path,
        typer.Argument(
            help="MatrixMarket coordinate file with the observed entries.",
            exists=True,
            file_okay=True,
            dir_okay=False,
            readable=True,
        ),
    ],
    rank: Annotated[int, typer.Option("--rank", "-r", help="Target rank.")],
    k: Annotated[int, typer.Option("--k", help="Entries removed per iteration.")] = 0,
    estimate_k: Annotated[
        bool,
        typer.Option("--estimate-k", help="Bound k by bisection before solving."),
    ] = False,
    kmin: Annotated[int, typer.Option("--kmin", help="Lower end of the k search.")] = 0,
    kmax: Annotated[
        Optional[int],
        typer.Option("--kmax", help="Upper end of the k search. Defaults to |Ω| / 2."),
    ] = None,
    max_iters: Annotated[int, typer.Option("--max-iters")] = 100,
    tol: Annotated[float, typer.Option("--tol")] = 1e-12,
    seed: Annotated[
        Optional[int], typer.Option("--seed", help="Defaults to RGNMR_SEED, then 0.")
    ] = None,
    noise_sigma: Annotated[float, typer.Option("--noise-sigma")] = 0.0,
    variant: Annotated[Variant, typer.Option("--variant")] = Variant.PLAIN,
    mu: Annotated[Optional[float], typer.Option("--mu")] = None,
    alpha: Annotated[Optional[float], typer.Option("--alpha")] = None,
    gamma: Annotated[float, typer.Option("--gamma")] = 1.0,
    delta: Annotated[
        Optional[float],
        typer.Option(
            "--delta",
            help="Neighborhood budget of the modified variant. The default sigma_r / (10 kappa) only lets the "
            "iterate move sqrt(delta) in total, so it rarely reaches the truth from a spectral start.",
        ),
    ] = None,
    threads: Annotated[
        int,
        typer.Option("--threads", help="Accepted for a uniform interface. One solve runs on one thread."),
    ] = 1,
    out: Annotated[
        Path,
        typer.Option("--out", "-o", help="Directory for U.mtx, V.mtx and diagnostics.jsonl."),
    ] = Path("."),
) -> None:
    """Recover a low-rank matrix from a MatrixMarket file of observed entries.

    Exit codes: 0 converged, 1 usage or IO error, 2 not converged, 3 ill-posed."""

    if rank < 1:
        raise _fail(f"--rank must be at least 1, got {rank}")

    if threads < 1:
        raise _fail("--threads must be at least 1")

    if variant == Variant.MODIFIED and (estimate_k or noise_sigma > 0):
        raise _fail("--estimate-k and --noise-sigma only apply to the plain variant")

    try:
        seed = seed if seed is not None else get_default_seed()
        obs = read_matrix_market(input_path)

        k_hat = None
        if variant == Variant.MODIFIED:
            result = _run_modified(
                obs, rank, k, max_iters, mu, alpha, gamma, delta, tol, seed
            )
        else:
            opts = SolveOptions(
                k=k,
                max_outer_iterations=max_iters,
                outer_tolerance=tol,
                seed=seed,
                noise_sigma=noise_sigma,
                inner=InnerSolveOptions(seed=seed),
            )

            if estimate_k:
                trace, result = run_with_estimated_k(obs, rank, opts, kmin, kmax)
                k_hat = trace.k_hat
                rich_print(f"Estimated corruption bound k_hat = {k_hat}")
            else:
                result = run(obs, rank, opts)
    except (InvalidArgumentError, ValidationError, OSError) as e:
        logging.error(e)
        raise _fail(f"Error Messages: {e}")
    except IllPosedProblemError as e:
        logging.error(e)
        raise _fail(f"Error Messages: {e}", ExitCode.ILL_POSED)
    except SolverConvergenceError as e:
        logging.error(e)
        raise _fail(f"Error Messages: {e}", ExitCode.NOT_CONVERGED)

    out.mkdir(parents=True, exist_ok=True)
    write_dense_matrix_market(out / "U.mtx", result.factors.u)
    write_dense_matrix_market(out / "V.mtx", result.factors.v)

    diagnostics = CompletionDiagnostics(
        input=str(input_path),
        rank=rank,
        variant=variant,
        k=k_hat if k_hat is not None else k,
        k_hat=k_hat,
        status=result.status,
        iterations=result.iterations_used,
        relative_residual=result.final_residual,
        lambda_stabilized=result.lambda_stabilized,
    )
    with open(out / "diagnostics.jsonl", "a") as file:
        file.write(diagnostics.model_dump_json() + "\n")

    code = STATUS_EXIT_CODES[result.status]
    if code != ExitCode.SUCCESS:
        rich_print(f"RGNMR stopped with status {result.status} ❌")
        raise typer.Exit(code=int(code))

    rich_print("RGNMR Completed Successfully ✅")


@cli.command()
def simulate(
    config: Annotated[
        str, typer.Argument(help="A preset name or the path of a YAML sweep file.")
    ],
    threads: Annotated[
        Optional[int],
        typer.Option("--threads", help="Concurrent trials. Defaults to RGNMR_THREADS."),
    ] = None,
    out: Annotated[
        Optional[Path],
        typer.Option("--out", "-o", help="CSV file for the trial records."),
    ] = None,
    dump_config: Annotated[
        bool,
        typer.Option("--dump-config", help="Print the validated config as JSON and exit."),
    ] = False,
) -> None:
    """Run a Monte-Carlo sweep and write one CSV row per trial."""

    try:
        sweep = load_sweep(config)
        sweep.points()
    except (InvalidArgumentError, ValidationError, OSError, yaml.YAMLError) as e:
        logging.error(e)
        raise _fail(f"Invalid sweep config: {e}")

    if dump_config:
        typer.echo(sweep.model_dump_json(indent=2))
        return

    if threads is not None and threads < 1:
        raise _fail("--threads must be at least 1")

    try:
        records = run_sweep(sweep, threads)
    except (InvalidArgumentError, InfeasibleSamplingError) as e:
        logging.error(e)
        raise _fail(f"Error Messages: {e}")
    except Exception:
        raise _fail(f"Error Messages: {traceback.format_exc()}")

    path = out or Path(f"{sweep.name}.csv")
    write_records_csv(records, path)

    if sweep.axes:
        rich_print(summarize_frame(records_to_frame(records), sweep.axes).to_string(index=False))

    rich_print(f"Wrote {len(records)} trial records to {path} ✅")


@cli.command()
def bench(
    sizes: Annotated[
        list[int], typer.Option("--sizes", help="Matrix sizes n (repeat the flag).")
    ] = [200, 400, 800],
    rank: Annotated[int, typer.Option("--rank", "-r")] = 5,
    rho: Annotated[float, typer.Option("--rho")] = 6.0,
    alpha: Annotated[float, typer.Option("--alpha")] = 0.05,
    repetitions: Annotated[int, typer.Option("--repetitions")] = 3,
    seed: Annotated[
        Optional[int], typer.Option("--seed", help="Defaults to RGNMR_SEED, then 0.")
    ] = None,
    out: Annotated[Path, typer.Option("--out", "-o")] = Path("bench.csv"),
) -> None:
    """Time the solver on n x n instances and fit the log-log slope of runtime in n."""

    try:
        seed = seed if seed is not None else get_default_seed()
        result = run_bench(sizes, rank, rho, alpha, repetitions, seed)
    except (InvalidArgumentError, ValidationError, InfeasibleSamplingError) as e:
        logging.error(e)
        raise _fail(f"Error Messages: {e}")

    result.to_frame().to_csv(out, index=False)

    rich_print(f"Log-log slope of median runtime: {result.slope:.2f}")
    rich_print(f"Wrote benchmark results to {out} ✅")


@cli.command()
def plot(
    records: Annotated[
        Path,
        typer.Argument(help="CSV written by `simulate`.", exists=True, dir_okay=False),
    ],
    x_axis: Annotated[str, typer.Option("--x-axis", help="Grid axis for the x axis.")],
    out: Annotated[Path, typer.Option("--out", "-o")] = Path("summary.svg"),
) -> None:
    """Render failure probability and median rel-RMSE against a grid axis as SVG."""

    try:
        summary_svg(read_records_frame(records), x_axis, out)
    except (InvalidArgumentError, OSError) as e:
        logging.error(e)
        raise _fail(f"Error Messages: {e}")

    rich_print(f"Wrote {out} ✅")


if __name__ == "__main__":
    cli()
