import typer
from typing import List
import logging
import rigidflow


app = typer.Typer()


def _exit_code(error: Exception) -> int:
    return getattr(error, "exit_code", 1)


def _handle(error: Exception, verbose: bool):
    if verbose:
        logging.debug(error, exc_info=True)
    else:
        typer.echo(error)
    raise typer.Exit(code=_exit_code(error))


@app.command("simulate")
def simulate(
    configpath: str = typer.Argument(
        ..., help="A scenario TOML file"
    ),
    outputpath: str = typer.Option(
        None, "-o", "--output", show_default=True,
        help="Run directory (If not provided it will be <RIGIDFLOW_OUT or .>/runs/<scenario name>)"
    ),
    verbose: bool = typer.Option(
        False, "-v", "--verbose", show_default=True,
        help="If you wanna a verbose mode logging"
    )
):
    """
        Run one coupled fluid and rigid body trajectory.

        The scenario file describes the container, the optional body, the initial fluid preset and the solver
        settings. The run directory gets the snapshots, energy.csv, body.csv, run.json and a manifest with the
        configuration hash, package versions, wall time and output hashes.

        When the body reaches the collision margin the command exits with code 3 and keeps the outputs
        written up to that point.

        You can control the command logging verbosity by the -v (or --verbose) argument.
    """

    try:
        rigidflow.simulate(configpath, outputpath, verbose)
    except Exception as e:
        _handle(e, verbose)


@app.command("sweep")
def sweep(
    planpath: str = typer.Argument(
        ..., help="A sweep plan TOML file"
    ),
    outputpath: str = typer.Option(
        None, "-o", "--output", show_default=True,
        help="Sweep directory (If not provided it will be the plan's output_dir or <RIGIDFLOW_OUT or .>/sweeps/<scenario name>)"
    ),
    verbose: bool = typer.Option(
        False, "-v", "--verbose", show_default=True,
        help="If you wanna a verbose mode logging"
    )
):
    """
        Run a vanishing-viscosity sweep and build its ensemble diagnostics.

        Every viscosity of the plan runs as a member of the sweep, in parallel when the plan asks for more than
        one worker. The Young measure of the completed members is built at the plan's times, with its
        dissipation defect written to defects.csv, and the viscous-term series of every member goes to
        viscous.csv. Failed members are recorded in sweep.json and the sweep goes on.

        You can control the command logging verbosity by the -v (or --verbose) argument.
    """

    try:
        rigidflow.sweep(planpath, outputpath, verbose)
    except Exception as e:
        _handle(e, verbose)


@app.command("compare")
def compare(
    weakpath: str = typer.Argument(
        ..., help="A run directory or a sweep directory"
    ),
    strongpath: str = typer.Argument(
        ..., help="The reference run directory"
    ),
    outputpath: str = typer.Option(
        None, "-o", "--output", show_default=True,
        help="Comparison directory (If not provided it will be <RIGIDFLOW_OUT or .>/comparisons/<A>_vs_<B>)"
    ),
    refinement: List[str] = typer.Option(
        None, "-r", "--refinement", show_default=True,
        help="A comparison directory of the same pair at another resolution, fits the Gronwall slack (repeatable)"
    ),
    verbose: bool = typer.Option(
        False, "-v", "--verbose", show_default=True,
        help="If you wanna a verbose mode logging"
    )
):
    """
        Compare a run, or the ensemble of a sweep, against a reference run.

        The reference run plays the strong solution. Its fields are carried to the first run's body configuration
        and the relative energy, its Gronwall rate, the forcing of the transformed equations, the map estimates
        and the pressure-work identity are written to relative_energy.csv, identities.csv and comparison.json.

        Comparisons of the same pair at other resolutions, given by -r (or --refinement), fit the slack a dt + b h^2
        of the Gronwall bound.

        Both runs must share the grid, the body shape and the snapshot times, otherwise the command exits with
        code 2.

        You can control the command logging verbosity by the -v (or --verbose) argument.
    """

    try:
        rigidflow.compare(weakpath, strongpath, outputpath, refinement, verbose)
    except Exception as e:
        _handle(e, verbose)


@app.command("verify")
def verify(
    suite: str = typer.Argument(
        ..., help="One of geometry, rigid, fluid, measure, transform, diagnostics or all"
    ),
    outputpath: str = typer.Option(
        None, "-o", "--output", show_default=True,
        help="Report directory (If not provided it will be <RIGIDFLOW_OUT or .>/verification/<suite>)"
    ),
    inject_fault: str = typer.Option(
        None, "-f", "--inject-fault", show_default=True,
        help="A fault injected to prove the suite catches it. The available fault is: orthogonality"
    ),
    verbose: bool = typer.Option(
        False, "-v", "--verbose", show_default=True,
        help="If you wanna a verbose mode logging"
    )
):
    """
        Run a verification suite and print its pass/fail table.

        The table is written to verification.csv and verification.json as well. The command exits with code 4
        when any invariant fails, naming the failed invariants, and with code 2 for an unknown suite or fault.

        E.g.:
        rigidflow verify rigid
        rigidflow verify all --inject-fault orthogonality

        You can control the command logging verbosity by the -v (or --verbose) argument.
    """

    try:
        rigidflow.verify(suite, outputpath, inject_fault, verbose)
    except Exception as e:
        _handle(e, verbose)


@app.command("version")
def version():
    """
    Show current rigidflow version
    """

    typer.echo(f"rigidflow {rigidflow.__version__}")


def main():
    app()
