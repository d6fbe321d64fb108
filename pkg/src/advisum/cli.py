"""Command-line entry point: one subcommand per stage plus ``run-all``.

Errors from the package exit with the code of their family (see
:mod:`advisum.errors`); click usage errors exit with 2.
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click

from .config import RunConfig, parse_backend_overrides
from .errors import AdvisumError
from .pipeline import STAGES, run_pipeline, run_stage

log = logging.getLogger("advisum")


def _common(fn):
    opts = [
        click.option("--manifest", type=click.Path(dir_okay=False, path_type=Path), default=None,
                     help="Dataset manifest (JSON Lines)."),
        click.option("--run", "run_dir", type=click.Path(file_okay=False, path_type=Path), required=True,
                     help="Run directory holding every stage's artifacts."),
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
                     default=None, help="YAML run config."),
        click.option("--seed", type=int, default=None, help="Override the config seed."),
        click.option("--jobs", type=click.IntRange(1), default=1, show_default=True,
                     help="Worker threads across assets."),
        click.option("--force", is_flag=True, help="Recompute even when a cached stage is stale."),
        click.option("--backend", "backends", multiple=True, metavar="ROLE=BINDING",
                     help="Rebind a backend role, e.g. judge=mock:length."),
        click.option("-v", "--verbose", is_flag=True, help="Log stage progress to stderr."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _build_config(config_path, seed, backends, **hyper) -> RunConfig:
    base = RunConfig.load(config_path) if config_path else RunConfig()
    return base.with_overrides(seed=seed, backends=parse_backend_overrides(backends), hyper=hyper)


def _handled(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        logging.basicConfig(level=logging.INFO if kwargs.pop("verbose", False) else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        try:
            return fn(*args, **kwargs)
        except AdvisumError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(e.exit_code)

    return wrapper


def _echo_report(report) -> None:
    state = "cached" if report.cached else f"done in {report.wall_time_s:.2f}s"
    click.echo(f"{report.stage}: {len(report.status)} asset(s) {state} [{report.config_hash[:12]}]")


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Multimodal video summarization pipeline."""


def _stage_command(stage: str, extra_options=(), hyper_map=None, extra_kwargs=()):
    """Register a subcommand running ``stage``."""
    hyper_map = hyper_map or {}

    @_handled
    def cmd(manifest, run_dir, config_path, seed, jobs, force, backends, **kw):
        backends = list(backends)
        if kw.get("estimator"):
            est = kw.pop("estimator")
            backends.append(f"flow={est}")
        kw.pop("estimator", None)
        hyper = {hyper_map[k]: kw.pop(k) for k in list(kw) if k in hyper_map}
        passthrough = {k: kw.pop(k) for k in list(kw) if k in extra_kwargs}
        cfg = _build_config(config_path, seed, backends, **hyper)
        _echo_report(run_stage(stage, cfg, run_dir, manifest=manifest, force=force, jobs=jobs, **passthrough))

    cmd.__name__ = stage.replace("-", "_")
    cmd.__doc__ = f"Run the {stage} stage."
    for opt in reversed(list(extra_options)):
        cmd = opt(cmd)
    main.command(name=stage)(_common(cmd))


_stage_command("ingest")
_stage_command("frames", [
    click.option("--budget", type=click.IntRange(1), default=None, help="Keyframes per video (m)."),
    click.option("--estimator", type=str, default=None,
                 help="Flow estimator binding: proxy, opencv or external:<module>:<factory>."),
], {"budget": "m"})
_stage_command("bos", [click.option("--max-len", type=click.IntRange(1), default=None,
                                    help="Summary length budget in tokens (l).")], {"max_len": "l"})
_stage_command("generate", [click.option("--candidates", type=click.IntRange(2), default=None,
                                         help="Candidates per prompt.")], {"candidates": "candidates"})
_stage_command("train-dpo", [
    click.option("--beta", type=float, default=None, help="DPO temperature."),
    click.option("--stages", type=click.IntRange(1), default=None, help="Curriculum stages."),
], {"beta": "beta", "stages": "stages"})
_stage_command("rank", [
    click.option("--k", "k", type=click.IntRange(1), default=None, help="Frames per bundle."),
    click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None,
                 help="Use this ranker checkpoint instead of training."),
], {"k": "k"}, ("checkpoint",))
_stage_command("evaluate", [
    click.option("--refs", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None,
                 help="Reference summaries / gold frames / votes (JSON Lines)."),
], {}, ("refs",))
_stage_command("report")


@main.command("run-all")
@click.option("--refs", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None)
@_common
@_handled
def run_all(manifest, run_dir, config_path, seed, jobs, force, backends, refs):
    """Run every stage in order."""
    cfg = _build_config(config_path, seed, backends)
    for report in run_pipeline(cfg, run_dir, manifest, refs=refs, force=force, jobs=jobs):
        _echo_report(report)
    index = json.loads((run_dir / "report" / "index.json").read_text(encoding="utf-8"))
    click.echo(f"bundles: {', '.join(str(run_dir / 'report' / (a + '.json')) for a in index['assets'])}")


@main.command("config")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--backend", "backends", multiple=True, metavar="ROLE=BINDING")
@_handled
def show_config(config_path, seed, backends, verbose=False):
    """Print the effective config as YAML, followed by its hash."""
    cfg = _build_config(config_path, seed, backends)
    click.echo(cfg.dump(), nl=False)
    click.echo(f"# hash: {cfg.hash}")


__all__ = ["main", "STAGES"]
