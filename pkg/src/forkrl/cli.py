import logging
import pathlib

import click
from rich import print
from rich.logging import RichHandler
from rich.table import Table

from .config import load_settings
from .demos import generate_demonstrations
from .errors import ForkRLError
from .evaluate import Method, MethodSpec, compare, episode_seeds, evaluate, write_run_metadata
from .planner import SUBTASKS, write_traces
from .plot_data import emit_error_cdf, emit_training_curve, read_trace_errors
from .selftest import run_selftest
from .train import BC_MODES, PPO_MODES, train_bc, train_ppo

log = logging.getLogger('forkrl')


class ForkRLGroup(click.Group):
    """Library errors become one-line messages with exit status 1."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except ForkRLError as e:
            raise click.ClickException(str(e)) from e


def _metrics_table(rows: list[dict]) -> Table:
    table = Table(title='evaluation')
    cols = ('method', 'success_rate', 'collision_rate', 'mean_cycle_time_s', 'mean_placement_error_m',
            'precision_rate')
    for c in cols:
        table.add_column(c)
    for r in rows:
        table.add_row(*('-' if r.get(c) is None else f"{r[c]:.4f}" if isinstance(r[c], float) else str(r[c])
                        for c in cols))
    return table


def _pairs(values: tuple[str, ...], what: str) -> dict[str, str]:
    out = {}
    for v in values:
        name, sep, path = v.partition('=')
        if not sep:
            raise click.BadParameter(f"expected METHOD=PATH, got {v!r}", param_hint=what)
        out[name] = path
    return out


@click.group(cls=ForkRLGroup)
@click.option('--config', 'config_path', default=None, help='YAML config (default: $FORKRL_CONFIG or config.yaml)')
@click.option('--seed', default=42, show_default=True, type=int)
@click.option('--out-dir', default='runs', show_default=True, type=click.Path(file_okay=False))
@click.option('--verbose', is_flag=True, help='debug logging')
@click.pass_context
def cli(ctx, config_path, seed, out_dir, verbose):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format='%(message)s',
                        handlers=[RichHandler(show_path=False)], force=True)
    try:
        settings = load_settings(config_path)
    except ForkRLError as e:
        raise click.ClickException(str(e)) from e
    ctx.obj = {'settings': settings, 'seed': seed, 'out_dir': pathlib.Path(out_dir)}


@cli.command('demo-gen')
@click.option('--n', 'n', default=None, type=int, help='successful demonstrations to store (default eval.demo_episodes)')
@click.option('--out', default=None, help='JSON-lines dataset path')
@click.pass_obj
def demo_gen(obj, n, out):
    settings = obj['settings']
    out = out or obj['out_dir'] / 'demos.jsonl'
    path = generate_demonstrations(settings, n or settings.eval.demo_episodes, obj['seed'], out)
    print(f"[bold]demos[/bold] -> {path}")


@cli.command('train-bc')
@click.option('--mode', type=click.Choice(BC_MODES), default='hbc', show_default=True)
@click.option('--demos', required=True, help='demonstration dataset')
@click.option('--out', default=None, help='checkpoint directory')
@click.option('--subtask', type=click.Choice(sorted(SUBTASKS)), default='full', show_default=True)
@click.pass_obj
def train_bc_cmd(obj, mode, demos, out, subtask):
    out = out or obj['out_dir'] / mode
    _, history = train_bc(obj['settings'], mode, demos, out, obj['seed'], subtask, progress=True)
    print(f"[bold]{mode}[/bold] final NLL: " +
          ', '.join(f"{c[:-4]} {history[c].iloc[-1]:.4f}" for c in history.columns if c != 'epoch'))
    print(f"checkpoints -> {out}")


@cli.command('train-ppo')
@click.option('--mode', type=click.Choice(PPO_MODES), default='hmer', show_default=True)
@click.option('--init', default=None, help='BC checkpoint manifest (required except for hrl)')
@click.option('--steps', default=None, type=int, help='environment steps (default ppo.total_steps)')
@click.option('--seed', 'run_seed', default=None, type=int, help='overrides the global seed')
@click.option('--out', default=None, help='checkpoint directory')
@click.option('--subtask', type=click.Choice(sorted(SUBTASKS)), default='full', show_default=True)
@click.pass_obj
def train_ppo_cmd(obj, mode, init, steps, run_seed, out, subtask):
    out = out or obj['out_dir'] / mode
    seed = obj['seed'] if run_seed is None else run_seed
    metrics = train_ppo(obj['settings'], mode, out, init, steps, seed, subtask, progress=True)
    final = metrics['success_rate'].dropna()
    print(f"[bold]{mode}[/bold] {int(metrics['step'].iloc[-1])} steps, eval success "
          f"{final.iloc[-1] if len(final) else float('nan'):.3f}")
    print(f"checkpoints -> {out}")


@cli.command('eval')
@click.option('--method', type=click.Choice([m.value for m in Method]), default='hmer', show_default=True)
@click.option('--checkpoint', default=None, help='checkpoint manifest (not needed for rule-based)')
@click.option('--episodes', default=None, type=int, help='default eval.episodes')
@click.option('--subtask', type=click.Choice(sorted(SUBTASKS)), default='full', show_default=True)
@click.option('--dump-trajectory', default=None, help='write per-step world snapshots of the first episode')
@click.pass_obj
def eval_cmd(obj, method, checkpoint, episodes, subtask, dump_trajectory):
    settings, seed, out_dir = obj['settings'], obj['seed'], obj['out_dir']
    n = episodes or settings.eval.episodes
    spec = MethodSpec(Method(method), checkpoint, subtask)
    m = evaluate(spec, settings, n, seed, progress=True, dump_trajectory=dump_trajectory)
    traces = write_traces(out_dir / f'eval_{method}.episodes.jsonl', m.episodes)
    write_run_metadata(traces, settings, episode_seeds(seed, n), {'method': method, 'subtask': subtask,
                                                                 'checkpoint': checkpoint})
    print(_metrics_table([m.row()]))
    print(f"episodes -> {traces}")


@cli.command('compare')
@click.option('--checkpoint', 'checkpoints', multiple=True, help='METHOD=MANIFEST, repeatable')
@click.option('--methods', default=','.join(m.value for m in Method), show_default=True)
@click.option('--episodes', default=None, type=int, help='default eval.episodes')
@click.option('--out', default=None, help='comparison CSV')
@click.pass_obj
def compare_cmd(obj, checkpoints, methods, episodes, out):
    settings = obj['settings']
    manifests = _pairs(checkpoints, '--checkpoint')
    specs = []
    for name in (s.strip() for s in methods.split(',') if s.strip()):
        try:
            method = Method(name)
        except ValueError:
            raise click.BadParameter(f"unknown method {name!r}", param_hint='--methods')
        specs.append(MethodSpec(method, manifests.get(name)))
    out = out or obj['out_dir'] / 'comparison.csv'
    df = compare(specs, settings, episodes or settings.eval.episodes, obj['seed'], out, progress=True)
    print(_metrics_table(df.to_dict('records')))
    print(f"comparison -> {out}")


@cli.command('plot-data')
@click.option('--episodes', 'episodes_path', default=None, help='episode traces from `eval` for the error CDF')
@click.option('--log', 'logs', multiple=True, help='METHOD=metrics.csv training log, repeatable')
@click.option('--grid-points', default=None, type=int, help='resample curves onto this many evenly spaced steps')
@click.option('--level', default=None, type=float,
              help="success level for steps-to-reach; defaults to the hrl log's final success rate")
@click.pass_obj
def plot_data(obj, episodes_path, logs, grid_points, level):
    settings, out_dir = obj['settings'], obj['out_dir']
    if not episodes_path and not logs:
        raise click.UsageError("give --episodes and/or --log")
    if episodes_path:
        _, summary = emit_error_cdf(read_trace_errors(episodes_path), out_dir / 'error_cdf.csv',
                                    settings.eval.precision_tol)
        print(f"[bold]CDF[/bold] {summary['n_successes']} successes, "
              f"{100 * summary['fraction_within_tol']:.1f}% within {summary['precision_tol_m']} m")
    if logs:
        _, summary = emit_training_curve(_pairs(logs, '--log'), out_dir / 'training_curves.csv', grid_points,
                                         level)
        for name, s in summary['methods'].items():
            print(f"[bold]{name}[/bold] final {s['final_success_rate']:.3f} auc {s['auc']:.3f} "
                  f"steps to {summary['level']}: {s['steps_to_level']}")
        if summary.get('warm_start_sample_ratio') is not None:
            print(f"warm-start sample ratio (hmer / hrl steps): {summary['warm_start_sample_ratio']:.2f}")


@cli.command('selftest')
@click.option('--full', is_flag=True, help='include the slow PPO toy benchmark')
@click.pass_obj
def selftest(obj, full):
    results = run_selftest(obj['settings'], include_slow=full)
    for r in results:
        mark = '[green]ok[/green]  ' if r.ok else '[red]FAIL[/red]'
        print(f"{mark} {r.name} ({r.seconds:.2f}s) {r.detail}")
    failed = [r for r in results if not r.ok]
    if failed:
        raise click.ClickException(f"{len(failed)} of {len(results)} checks failed")
    print(f"[bold]{len(results)} checks passed[/bold]")


if __name__ == '__main__':
    cli()
