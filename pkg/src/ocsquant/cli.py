"""Command-line interface: quantize, sweep, profile, inspect.

Exit codes: 0 on success, 2 on usage errors (bad flags/ranges), 1 on runtime
errors (missing files, malformed containers, degenerate distributions).
"""

from __future__ import annotations

import json
from pathlib import Path

import click

from .harness import RunConfig, describe_container, describe_model, profile_report, run_quantize, run_sweep

CLIP_CHOICES = click.Choice(["none", "mse", "aciq", "kl"])


def _run_config(**kw) -> RunConfig:
    cfg = RunConfig(**kw)
    try:
        cfg.validate()
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    return cfg


def _parse_list(value: str, cast, flag: str) -> list:
    try:
        items = [cast(v.strip()) for v in value.split(",") if v.strip()]
    except ValueError as exc:
        raise click.UsageError(f"bad value for {flag}: {exc}") from exc
    if not items:
        raise click.UsageError(f"{flag} must list at least one value")
    return items


@click.group()
def main():
    """Post-training quantization experiments: clipping and channel splitting."""


def _common_options(fn):
    opts = [
        click.option("--model", required=True, type=click.Path(exists=True, path_type=Path),
                     help="Model container (.qnt)"),
        click.option("--data", required=True, type=click.Path(exists=True, path_type=Path),
                     help="Dataset container (.qnt) with profile/eval splits"),
        click.option("--abits", default=8, show_default=True, help="Activation bit width"),
        click.option("--clip-a", default="none", type=CLIP_CHOICES, show_default=True,
                     help="Activation clip method"),
        click.option("--profile-samples", default=512, show_default=True,
                     help="Profiling sample budget"),
        click.option("--seed", default=0, show_default=True, help="Run seed (recorded)"),
        click.option("--out", type=click.Path(path_type=Path), help="Report CSV path"),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


@main.command()
@_common_options
@click.option("--wbits", default=8, show_default=True, help="Weight bit width")
@click.option("--clip-w", default="none", type=CLIP_CHOICES, show_default=True,
              help="Weight clip method")
@click.option("--ocs-target", default="none", type=click.Choice(["weights", "acts", "none"]),
              show_default=True, help="Channel-splitting target")
@click.option("--ocs-ratio", default=0.0, show_default=True, help="Channel expand ratio")
@click.option("--qa/--no-qa", default=True, show_default=True,
              help="Quantization-aware split values for weight targets")
@click.option("--oracle", is_flag=True, help="Re-select activation splits per eval batch")
@click.option("--oracle-batch", default=1, show_default=True, help="Oracle batch size")
@click.option("--save-model", "save_model_path", type=click.Path(path_type=Path),
              help="Write the transformed model container here")
@click.option("--save-plan", "save_plan_path", type=click.Path(path_type=Path),
              help="Write the split plan JSON here")
def quantize(model, data, wbits, abits, clip_w, clip_a, ocs_target, ocs_ratio, qa,
             profile_samples, oracle, oracle_batch, out, seed,
             save_model_path, save_plan_path):
    """Quantize one model under one configuration and evaluate it."""
    cfg = _run_config(
        model=model, data=data, wbits=wbits, abits=abits, clip_w=clip_w, clip_a=clip_a,
        ocs_target=ocs_target, ocs_ratio=ocs_ratio, qa=qa,
        profile_samples=profile_samples, oracle=oracle, oracle_batch=oracle_batch,
        out=out, seed=seed, save_model_path=save_model_path, save_plan_path=save_plan_path,
    )
    try:
        result = run_quantize(cfg)
    except (ValueError, OSError) as exc:
        raise click.ClickException(str(exc)) from exc
    row = result.row
    metric = "accuracy" if result.accuracy is not None else "output-mse"
    click.echo(
        f"{row.model}: bits={row.bits} clip={row.clip_method} ocs={row.target}@{row.ocs_ratio:g} "
        f"qa={row.qa} {metric}={row.accuracy_or_mse:.6g} "
        f"rel_weight={row.rel_weight_size:.6g} rel_act={row.rel_act_size:.6g}"
    )
    if result.float_accuracy is not None and result.accuracy is not None:
        click.echo(f"float accuracy: {result.float_accuracy:.6g}")


@main.command()
@_common_options
@click.option("--wbits", default="8", show_default=True,
              help="Comma-separated weight bit widths")
@click.option("--clip-w", default="none,mse,aciq,kl", show_default=True,
              help="Comma-separated weight clip methods")
@click.option("--ocs-ratios", default="0", show_default=True,
              help="Comma-separated expand ratios")
@click.option("--ocs-target", default="weights", type=click.Choice(["weights", "acts"]),
              show_default=True, help="Channel-splitting target for nonzero ratios")
@click.option("--qa/--no-qa", default=True, show_default=True)
def sweep(model, data, wbits, abits, clip_w, clip_a, ocs_ratios, ocs_target, qa,
          profile_samples, seed, out):
    """Sweep bit widths x clip methods x expand ratios; append best-clip rows."""
    bits_list = _parse_list(wbits, int, "--wbits")
    methods = _parse_list(clip_w, str, "--clip-w")
    for m in methods:
        if m not in ("none", "mse", "aciq", "kl"):
            raise click.UsageError(f"unknown clip method {m!r}")
    ratios = _parse_list(ocs_ratios, float, "--ocs-ratios")
    cfg = _run_config(
        model=model, data=data, abits=abits, clip_a=clip_a, ocs_target=ocs_target,
        qa=qa, profile_samples=profile_samples, seed=seed, out=out,
    )
    try:
        rows = run_sweep(cfg, bits_list, methods, ratios)
    except (ValueError, OSError) as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"{len(rows)} rows" + (f" -> {out}" if out else ""))
    if out is None:
        for row in rows:
            click.echo(
                f"bits={row.bits} clip={row.clip_method} r={row.ocs_ratio:g} "
                f"metric={row.accuracy_or_mse:.6g}"
            )


@main.command()
@click.option("--model", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--data", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--profile-samples", default=512, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), help="Write stats JSON here")
def profile(model, data, profile_samples, out):
    """Profile activation distributions and print per-site statistics."""
    if profile_samples < 1:
        raise click.UsageError("--profile-samples must be >= 1")
    try:
        stats = profile_report(model, data, profile_samples)
    except (ValueError, OSError) as exc:
        raise click.ClickException(str(exc)) from exc
    text = json.dumps(stats, indent=2, sort_keys=True)
    if out is not None:
        Path(out).write_text(text + "\n")
        click.echo(f"wrote {out}")
    else:
        click.echo(text)


@main.command()
@click.argument("path", type=click.Path(exists=True, path_type=Path))
def inspect(path):
    """Describe a .qnt container (model, dataset, or golden file)."""
    try:
        try:
            click.echo(describe_model(path))
        except ValueError:
            click.echo(describe_container(path))
    except (ValueError, OSError) as exc:
        raise click.ClickException(str(exc)) from exc


if __name__ == "__main__":
    main()
