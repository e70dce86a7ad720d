"""CSV series for plotting: placement-error CDF and resampled training curves."""
import json
import logging
import pathlib

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from .errors import EmptyLogError, NoSuccessesError

log = logging.getLogger(__name__)

FLOAT_FORMAT = '%.6f'


def error_cdf(errors) -> pd.DataFrame:
    """Empirical CDF: sorted errors against i/n."""
    x = np.sort(np.asarray(errors, dtype=float))
    if len(x) == 0:
        raise NoSuccessesError("no successful episodes: placement error CDF is undefined")
    return pd.DataFrame({'error_m': x, 'cumulative_fraction': np.arange(1, len(x) + 1) / len(x)})


def read_trace_errors(path) -> list[float]:
    """Placement errors of the successful episodes in an episode-trace file."""
    errors = []
    with pathlib.Path(path).open('r') as f:
        for line in f:
            rec = json.loads(line)
            if rec.get('type') == 'episode' and rec.get('outcome') == 'success' and rec.get('place_error') is not None:
                errors.append(float(rec['place_error']))
    return errors


def emit_error_cdf(errors, out=None, precision_tol: float = 0.02) -> tuple[pd.DataFrame, dict]:
    cdf = error_cdf(errors)
    x = cdf['error_m'].to_numpy()
    summary = {
        'n_successes': int(len(x)),
        'precision_tol_m': precision_tol,
        'fraction_within_tol': float(np.mean(x <= precision_tol)),
        'median_error_m': float(np.median(x)),
        'max_error_m': float(x[-1]),
    }
    if out is not None:
        out = pathlib.Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        cdf.to_csv(out, index=False, float_format=FLOAT_FORMAT)
        out.with_name(out.stem + '.summary.json').write_text(json.dumps(summary, indent=2))
        log.info("CDF over %d successes: %.1f%% within %.3f m", len(x), 100 * summary['fraction_within_tol'],
                 precision_tol)
    return cdf, summary


# ------------------------------- training curves ---------------------------- #

def read_log(source) -> pd.DataFrame:
    """A training metrics log (path or frame) reduced to its evaluation points."""
    df = source if isinstance(source, pd.DataFrame) else pd.read_csv(source)
    if 'step' not in df or 'success_rate' not in df:
        raise EmptyLogError(f"{source if not isinstance(source, pd.DataFrame) else 'log'}: "
                            "needs 'step' and 'success_rate' columns")
    df = df[['step', 'success_rate']].dropna().sort_values('step').drop_duplicates('step', keep='last')
    if df.empty:
        raise EmptyLogError("training log has no evaluation points")
    return df.reset_index(drop=True)


def steps_to_reach(curve: pd.DataFrame, level: float) -> float | None:
    """First logged step at which the success rate reaches `level`."""
    hit = curve.loc[curve['success_rate'] >= level, 'step']
    return float(hit.iloc[0]) if len(hit) else None


def curve_auc(steps: np.ndarray, rates: np.ndarray) -> float:
    """Area under the success curve normalized by its step span."""
    span = steps[-1] - steps[0]
    if span <= 0:
        return float(rates[-1])
    return float(trapezoid(rates, steps) / span)


DEFAULT_LEVEL = 0.8


def warm_start_ratio(warm_steps: float | None, scratch_steps: float | None) -> float | None:
    """
    Fraction of the scratch run's samples the warm-started run needed to reach the
    same level. A warm start already at the level on its first point gives 0.0;
    the ratio is undefined (None) if either run never reaches the level or the
    scratch run starts there.
    """
    if warm_steps is None or scratch_steps is None or scratch_steps == 0:
        return None
    return warm_steps / scratch_steps


def emit_training_curve(logs: dict, out=None, grid_points: int | None = None,
                        level: float | None = None) -> tuple[pd.DataFrame, dict]:
    """
    Resample each method's success-rate log onto a shared step grid for overlay.
    Without `grid_points` the grid is the union of all logged steps; curves are
    held constant outside their own logged range.

    `level` defaults to the final success rate of the `hrl` log when both `hmer`
    and `hrl` are given, else to 0.8.
    """
    if not logs:
        raise EmptyLogError("no training logs given")
    curves = {name: read_log(src) for name, src in logs.items()}
    if level is None:
        paired = 'hmer' in curves and 'hrl' in curves
        level = float(curves['hrl']['success_rate'].iloc[-1]) if paired else DEFAULT_LEVEL
    lo = min(c['step'].iloc[0] for c in curves.values())
    hi = max(c['step'].iloc[-1] for c in curves.values())
    if grid_points:
        grid = np.linspace(lo, hi, grid_points)
    else:
        grid = np.unique(np.concatenate([c['step'].to_numpy() for c in curves.values()]))

    frame = pd.DataFrame({'step': grid})
    summary: dict = {'level': level, 'methods': {}}
    for name, c in curves.items():
        frame[name] = np.interp(grid, c['step'].to_numpy(float), c['success_rate'].to_numpy(float))
        summary['methods'][name] = {
            'final_success_rate': float(c['success_rate'].iloc[-1]),
            'auc': curve_auc(grid, frame[name].to_numpy()),
            'steps_to_level': steps_to_reach(c, level),
        }
    m = summary['methods']
    if 'hmer' in m and 'hrl' in m:
        summary['hmer_minus_hrl_auc'] = m['hmer']['auc'] - m['hrl']['auc']
        summary['warm_start_sample_ratio'] = warm_start_ratio(m['hmer']['steps_to_level'],
                                                               m['hrl']['steps_to_level'])

    if out is not None:
        out = pathlib.Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(out, index=False, float_format=FLOAT_FORMAT)
        out.with_name(out.stem + '.summary.json').write_text(json.dumps(summary, indent=2))
        log.info("wrote %d-point training curves for %s to %s", len(grid), ', '.join(curves), out)
    return frame, summary
