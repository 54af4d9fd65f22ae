"""Command-line entry points: build-data, reward, serve, eval, report."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from ..rewards import JudgeClient, RewardKind
from .config import RunConfig
from .pipelines import (
    EXIT_CONFIG,
    PipelineError,
    build_data,
    run_eval,
    run_reward_batch,
    write_report,
)
from .scoring import RewardScorer
from .stream import serve_stdio, serve_tcp


def _load_config(ctx: click.Context, **overrides) -> RunConfig:
    params = ctx.obj or {}
    try:
        return RunConfig.load(
            params.get("config"),
            seed=params.get("seed"),
            workers=params.get("workers"),
            **overrides,
        )
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        raise click.ClickException(f"bad configuration: {exc}") from exc


@click.group(context_settings={"auto_envvar_prefix": "ICRKIT"})
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--seed", type=int, default=None, help="Pipeline seed (default 0).")
@click.option("--workers", type=int, default=None, help="Concurrent scoring workers.")
@click.pass_context
def main(ctx: click.Context, config, seed, workers) -> None:
    """Reward engineering and retrieval evaluation for long-context QA."""
    ctx.obj = {"config": config, "seed": seed, "workers": workers}


@main.command("build-data")
@click.option("--candidates", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--outdir", required=True, type=click.Path(file_okay=False))
@click.option("--judge-fixtures", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--approve-all", is_flag=True, help="Skip the judge stage, keep every promotion.")
@click.option("--token-sidecar", type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_context
def build_data_cmd(ctx, candidates, outdir, judge_fixtures, approve_all, token_sidecar):
    """Refine, shuffle, and split a candidate-retrieval file into train/dev."""
    config = _load_config(ctx, judge_fixtures=judge_fixtures)
    judge = JudgeClient.from_fixture_file(judge_fixtures) if judge_fixtures else None
    try:
        report = build_data(
            candidates,
            outdir,
            config,
            judge=judge,
            approve_all=approve_all,
            token_sidecar=token_sidecar,
        )
    except PipelineError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    click.echo(json.dumps({k: report[k] for k in ("instances_built", "train", "dev")}))


@main.command("reward")
@click.option("--instances", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--predictions", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--kind", required=True, help="AO | ID | ID_C | ID_Q | R_JUDGE")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--judge-fixtures", type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_context
def reward_cmd(ctx, instances, predictions, kind, out, judge_fixtures):
    """Score a prediction file against a corpus; one response line per request."""
    config = _load_config(
        ctx, corpus_paths=[instances], judge_fixtures=judge_fixtures
    )
    try:
        kind_parsed = RewardKind.parse(kind)
        scorer = RewardScorer(config)
        if kind_parsed is RewardKind.R_JUDGE and scorer.judge is None:
            raise PipelineError("kind R_JUDGE requires --judge-fixtures or a live judge")
    except (PipelineError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    code, summary = run_reward_batch(scorer, predictions, kind_parsed, out)
    click.echo(json.dumps(summary))
    sys.exit(code)


@main.command("serve")
@click.option("--instances", multiple=True, type=click.Path(exists=True, dir_okay=False))
@click.option(
    "--transport",
    type=click.Choice(["stdio", "tcp", "http"]),
    default="stdio",
    show_default=True,
)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=0, help="0 picks a free port.")
@click.option("--judge-fixtures", type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_context
def serve_cmd(ctx, instances, transport, host, port, judge_fixtures):
    """Serve rewards over NDJSON (stdio/tcp) or HTTP."""
    config = _load_config(
        ctx,
        corpus_paths=list(instances) if instances else None,
        judge_fixtures=judge_fixtures,
    )
    try:
        config.validate_paths()
        scorer = RewardScorer(config)
    except (FileNotFoundError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)

    if transport == "stdio":
        serve_stdio(scorer, workers=config.workers)
        return
    if transport == "tcp":
        server = serve_tcp(
            scorer,
            host,
            port,
            workers=config.workers,
            announce=lambda event: (
                sys.stdout.write(json.dumps(event) + "\n"),
                sys.stdout.flush(),
            ),
        )
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            server.shutdown()
            server.server_close()
        return
    import uvicorn

    from .api import create_app

    uvicorn.run(create_app(scorer=scorer), host=host, port=port or 8000)


@main.command("eval")
@click.option("--run-id", default="eval")
@click.option("--outdir", required=True, type=click.Path(file_okay=False))
@click.option("--instances", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--predictions", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option(
    "--metric",
    type=click.Choice(["subem", "rouge", "mc"]),
    default="subem",
    show_default=True,
)
@click.option("--attention", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--retention-budgets", default="", help="Comma list of fractions, e.g. 0.25,0.5")
@click.option("--drop-full", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--drop-compressed", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--correlate", type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_context
def eval_cmd(
    ctx,
    run_id,
    outdir,
    instances,
    predictions,
    metric,
    attention,
    retention_budgets,
    drop_full,
    drop_compressed,
    correlate,
):
    """Score predictions and run the aggregate analyses into report files."""
    config = _load_config(ctx)
    budgets = [float(b) for b in retention_budgets.split(",") if b.strip()]
    try:
        report = run_eval(
            run_id,
            config,
            outdir,
            instances_path=instances,
            predictions_path=predictions,
            metric=metric,
            attention_path=attention,
            retention_budgets=budgets,
            drop_full_path=drop_full,
            drop_compressed_path=drop_compressed,
            correlate_path=correlate,
        )
    except (PipelineError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    click.echo(json.dumps({"run_id": report.run_id, "average": report.average}))


@main.command("report")
@click.option("--report", "report_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--outdir", required=True, type=click.Path(file_okay=False))
def report_cmd(report_path, outdir):
    """Re-emit the TSV tables of a stored report and print its summary."""
    from ..evaluation import EvalReport

    data = json.loads(Path(report_path).read_text(encoding="utf-8"))
    report = EvalReport(
        run_id=data["run_id"],
        metric=data.get("metric", ""),
        per_instance=data.get("per_instance", []),
        group_means=data.get("group_means", {}),
        average=data.get("average", 0.0),
        ndcg=data.get("ndcg"),
        retention=data.get("retention"),
        drop=data.get("drop"),
        correlation=data.get("correlation"),
    )
    write_report(report, outdir)
    click.echo(f"run {report.run_id}: metric={report.metric} average={report.average:.4f}")
    for group, mean in report.group_means.items():
        click.echo(f"  {group}: {mean:.4f}")


if __name__ == "__main__":
    main()
