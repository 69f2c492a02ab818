"""Command line entry point: ``mirisac <family> [--spec FILE] ...``."""

from __future__ import annotations

import json
from importlib import resources

import click

from . import __version__
from .experiments import FAMILIES, ExperimentSpec, emit_results, run_experiment


def default_spec(family: str) -> ExperimentSpec:
    """The shipped experiment file for ``family``."""
    text = resources.files("mirisac").joinpath("data", "experiments", f"{family}.json").read_text()
    return ExperimentSpec.from_dict(json.loads(text))


def _run(family, spec_path, outdir, seed, trials, jobs):
    spec = ExperimentSpec.load(spec_path) if spec_path else default_spec(family)
    if spec.family != family:
        raise click.UsageError(f"spec {spec.name!r} is a {spec.family} experiment, not {family}")
    d = spec.to_dict()
    if seed is not None:
        d["seed"] = seed
    if trials is not None:
        d["trials"] = trials
    spec = ExperimentSpec.from_dict(d)
    rows = run_experiment(spec, jobs=jobs)
    data, manifest = emit_results(rows, spec, outdir)
    failed = sum(r.failures for r in rows)
    click.echo(f"{data}\n{manifest}")
    if failed:
        click.echo(f"{failed} infeasible trial(s) skipped", err=True)


@click.group()
@click.version_option(version=__version__)
def main():
    """Movable-element IRS ISAC experiments."""


def _command(family):
    @click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), default=None,
                  help="Experiment JSON (defaults to the shipped one).")
    @click.option("--out", "outdir", type=click.Path(file_okay=False), default="results", show_default=True)
    @click.option("--seed", type=int, default=None, help="Override the base seed.")
    @click.option("--trials", type=click.IntRange(min=1), default=None, help="Override trials per point.")
    @click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True,
                  help="Worker processes for the trials of a point.")
    def cmd(spec_path, outdir, seed, trials, jobs):
        _run(family, spec_path, outdir, seed, trials, jobs)

    cmd.__doc__ = f"Run a {family} sweep and write CSV plus manifest."
    main.command(name=family)(cmd)


for _f in FAMILIES:
    _command(_f)


if __name__ == "__main__":
    main()
