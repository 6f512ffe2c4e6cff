"""Command-line front end: run scenarios, recompute reports from saved
runs, start the operator gateway, and execute the invariant self-test."""
from __future__ import annotations

import sys
from pathlib import Path

import click

from .harness import (Scenario, five_step_task, load_runlog, report,
                      report_json, run_scenario, save_runlog,
                      verify_invariants, write_report)
from .kinematics import RobotModel
from .phantom import SyntheticPhantom


@click.group()
def main():
    """Desk-scale visual-haptic teleoperated-ultrasound simulator."""


def _build_scenario(scenario, delay_ms, mode, seed) -> Scenario:
    import dataclasses
    if scenario is not None:
        sc = Scenario.load(scenario)
    else:
        sc = five_step_task(SyntheticPhantom(), RobotModel.default(),
                            delay_ms=delay_ms or 0.0, seed=seed or 0)
    overrides = {k: v for k, v in (("delay_ms", delay_ms), ("mode", mode),
                                   ("seed", seed)) if v is not None}
    return dataclasses.replace(sc, **overrides) if overrides else sc


@main.command()
@click.option("--scenario", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Scenario JSON; omit for the built-in "
              "five-step scripted task.")
@click.option("--delay-ms", type=float, default=None,
              help="One-way network delay override.")
@click.option("--mode", type=click.Choice(["mmt", "vhmmt"]), default=None,
              help="Preview disabled (mmt) or enabled (vhmmt).")
@click.option("--seed", type=int, default=None, help="Scenario seed.")
@click.option("--out", type=click.Path(file_okay=False), default="out",
              help="Output directory for logs and reports.")
def run(scenario, delay_ms, mode, seed, out):
    """Execute a scenario and write its run log and metrics report."""
    sc = _build_scenario(scenario, delay_ms, mode, seed)
    log = run_scenario(sc)
    save_runlog(log, out)
    rep = report(log)
    write_report(rep, out)
    click.echo(report_json(rep))
    if rep["invariant_violations"]:
        click.echo("invariant violations detected", err=True)
        sys.exit(1)


@main.command("report")
@click.option("--out", "run_dir", type=click.Path(exists=True,
              file_okay=False), required=True,
              help="Directory holding a saved run log.")
def report_cmd(run_dir):
    """Recompute the metrics report from a saved run directory."""
    log = load_runlog(run_dir)
    rep = report(log)
    write_report(rep, run_dir)
    click.echo(report_json(rep))
    if rep["invariant_violations"]:
        sys.exit(1)


@main.command()
@click.option("--port", type=int, default=8400, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--delay-ms", type=float, default=0.0, show_default=True)
@click.option("--mode", type=click.Choice(["mmt", "vhmmt"]),
              default="vhmmt", show_default=True)
def serve(port, host, delay_ms, mode):
    """Start the operator gateway (browser console endpoint)."""
    import uvicorn

    from .gateway import GatewayConfig, create_app
    app = create_app(GatewayConfig(delay_ms=delay_ms, mode=mode))
    uvicorn.run(app, host=host, port=port, log_level="info")


@main.command()
@click.option("--delay-ms", type=float, default=500.0, show_default=True,
              help="Delay used for the causality check.")
def selftest(delay_ms):
    """Run short end-to-end scenarios and verify every log invariant."""
    phantom, model = SyntheticPhantom(), RobotModel.default()
    failures = 0
    for name, sc in (
            ("zero-delay", five_step_task(phantom, model, delay_ms=0.0,
                                          seed=7, steps=(3,))),
            (f"{delay_ms:g} ms delay", five_step_task(
                phantom, model, delay_ms=delay_ms, seed=7, steps=(3,)))):
        log = run_scenario(sc)
        problems = verify_invariants(log)
        ok = log.completed and not problems
        click.echo(f"[{'PASS' if ok else 'FAIL'}] {name}: "
                   f"completed={log.completed} "
                   f"violations={problems or 'none'}")
        failures += 0 if ok else 1
    sys.exit(1 if failures else 0)


if __name__ == "__main__":
    main()
