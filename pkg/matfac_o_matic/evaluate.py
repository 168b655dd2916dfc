# SPDX-FileCopyrightText: 2026 matfac-o-matic contributors
#
# SPDX-License-Identifier: LGPL-3.0-only
#
# Point metrics and log predictive scores on the log(1 + y) scale, cell-wise
# k-fold cross-validation over (Q, R) grids, rolling-origin forecast
# evaluation, and the model-selection tables built from them.

import concurrent.futures
import dataclasses
import logging
import math
import pathlib

import numpy as np
import pandas as pd
from scipy import special

from matfac_o_matic.bench.auto import AutoForecaster
from matfac_o_matic.bench.base import BenchmarkSpec
from matfac_o_matic.config import check_keys
from matfac_o_matic.errors import Error, ValidationError
from matfac_o_matic.model.forecast import forecast_counts, forecast_two_step
from matfac_o_matic.model.panel import to_log_panel
from matfac_o_matic.model.priors import PriorSpec
from matfac_o_matic.model.sampler import (initialize_auto,
                                         poisson_loglik_cell, run_chain)
from matfac_o_matic.model.state import Z_CAP, SamplerConfig

logger = logging.getLogger(__name__)

MATRIX_FACTOR = 'bmf'
TWO_STEP = 'two_step'

# Pooled sufficient statistics kept on every report row.
_STATS = ('n_cells', 'sse', 'sae', 'sum_t', 'sum_p', 'sum_tt', 'sum_pp',
          'sum_tp', 'lps_sum', 'lps_cells')

COLUMNS = ('model', 'Q', 'R', 'horizon', 'split', 'rmse', 'mae', 'corr',
           'lps', 'status') + _STATS


def point_metrics(truth, pred):
    '''
    (rmse, mae, corr) of two equal-length vectors. corr is NaN when either
    vector is constant or shorter than 2.
    '''
    truth = np.asarray(truth, dtype=float).ravel()
    pred = np.asarray(pred, dtype=float).ravel()
    if truth.shape != pred.shape or truth.size == 0:
        raise ValidationError('truth and prediction must be nonempty and of '
                              'equal length, got %d and %d'
                              % (truth.size, pred.size))
    err = pred - truth
    rmse = float(np.sqrt(np.mean(err ** 2)))
    mae = float(np.mean(np.abs(err)))
    return rmse, mae, _corr(truth, pred)


def _corr(truth, pred):
    if truth.size < 2 or np.ptp(truth) == 0 or np.ptp(pred) == 0:
        logger.warning('correlation undefined for %d cell(s) with a constant '
                       'side', truth.size)
        return math.nan
    return float(np.corrcoef(truth, pred)[0, 1])


def log_predictive_scores(y, O, z_draws):
    '''
    Per-cell log of the Monte Carlo predictive probability. z_draws is
    S x cells (or S for one cell).
    '''
    z_draws = np.asarray(z_draws, dtype=float)
    if z_draws.shape[0] < 1:
        raise ValidationError('log predictive score needs at least one draw')
    ll = poisson_loglik_cell(y, O, z_draws)
    with np.errstate(divide='ignore'):
        scores = special.logsumexp(ll, axis=0) - math.log(z_draws.shape[0])
    dead = np.isneginf(scores)
    if np.any(dead):
        logger.warning('%d cell(s) with -inf log predictive score',
                       int(np.sum(dead)))
    return scores


def log_predictive_score(y, O, z_draws):
    return float(log_predictive_scores(y, O, np.asarray(z_draws, dtype=float)
                                       .reshape(-1)))


def predictive_log_mean(z_draws, O, rng):
    '''
    Posterior mean of log(1 + y) with y ~ Poisson(O e^z), one count draw per
    latent draw.
    '''
    z_draws = np.asarray(z_draws, dtype=float)
    counts = rng.poisson(O * np.exp(np.minimum(z_draws, Z_CAP)))
    return np.log1p(counts).mean(axis=0)


def job_seed(master_seed, *key):
    '''
    Seed of one grid job; depends only on the master seed and the key.
    '''
    seq = np.random.SeedSequence([int(master_seed)] + [int(k) for k in key])
    return int(seq.generate_state(1)[0])


def cv_partition(panel, k=10, rng=None):
    '''
    Random disjoint split of the observed cells into k folds whose sizes
    differ by at most one. Returns one N x T x A hold-out mask per fold.
    '''
    if int(k) < 2:
        raise ValidationError('cv needs k >= 2, got %r' % (k,))
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(np.random.SeedSequence(rng or 0))
    cells = np.flatnonzero(panel.mask.ravel())
    if len(cells) < k:
        raise ValidationError('%d observed cells cannot fill %d folds'
                              % (len(cells), k))
    order = rng.permutation(cells)
    masks = []
    for fold in np.array_split(order, int(k)):
        mask = np.zeros(panel.mask.size, dtype=bool)
        mask[fold] = True
        masks.append(mask.reshape(panel.mask.shape))
    return masks


def _nullable_int(column):
    # None and pd.NA both become <NA>.
    return pd.to_numeric(column, errors='coerce').astype('Int64')


def _row(model, Q, R, horizon, split, truth=None, pred=None, lps=None,
         status='ok'):
    row = dict.fromkeys(COLUMNS, math.nan)
    row.update(model=model, Q=Q, R=R, horizon=horizon, split=split,
               status=status)
    if status != 'ok':
        row['n_cells'] = 0
        return row
    truth = np.asarray(truth, dtype=float)
    pred = np.asarray(pred, dtype=float)
    row['rmse'], row['mae'], row['corr'] = point_metrics(truth, pred)
    err = pred - truth
    row.update(n_cells=truth.size, sse=float(np.sum(err ** 2)),
               sae=float(np.sum(np.abs(err))), sum_t=float(truth.sum()),
               sum_p=float(pred.sum()), sum_tt=float(np.sum(truth ** 2)),
               sum_pp=float(np.sum(pred ** 2)),
               sum_tp=float(np.sum(truth * pred)))
    if lps is not None:
        lps = np.asarray(lps, dtype=float)
        row.update(lps=float(lps.mean()), lps_sum=float(lps.sum()),
                   lps_cells=lps.size)
    else:
        row['lps_cells'] = 0
    return row


class EvalReport(object):
    '''
    One row per (model, Q, R, horizon, split) job. split is the CV fold or
    the rolling window. Besides the metrics each row carries pooled sums so
    any set of rows can be re-aggregated over cells.
    '''

    def __init__(self, rows=None, predictions=None):
        frame = pd.DataFrame(list(rows or []), columns=list(COLUMNS))
        self.frame = self._sorted(frame)
        self.predictions = predictions if predictions is not None else \
            pd.DataFrame(columns=['model', 'Q', 'R', 'horizon', 'split',
                                  'population', 'year', 'age', 'truth',
                                  'pred'])

    @staticmethod
    def _sorted(frame):
        for column in ('Q', 'R', 'horizon', 'split'):
            frame[column] = _nullable_int(frame[column])
        return frame.sort_values(['model', 'Q', 'R', 'horizon', 'split'],
                                 na_position='first', kind='stable') \
            .reset_index(drop=True)

    def __len__(self):
        return len(self.frame)

    def merge(self, other):
        return EvalReport(
            pd.concat([self.frame, other.frame]).to_dict('records'),
            pd.concat([self.predictions, other.predictions],
                      ignore_index=True))

    @property
    def failed(self):
        return self.frame[self.frame['status'] != 'ok']

    def summary(self):
        '''
        Metrics pooled over all cells of the successful splits, per
        (model, Q, R, horizon), plus the standard error of the per-split
        RMSE.
        '''
        ok = self.frame[self.frame['status'] == 'ok']
        keys = ['model', 'Q', 'R', 'horizon']
        rows = []
        for key, group in ok.groupby(keys, dropna=False, sort=True):
            n = group['n_cells'].sum()
            sums = group[list(_STATS)].sum()
            mean_t, mean_p = sums['sum_t'] / n, sums['sum_p'] / n
            var_t = sums['sum_tt'] / n - mean_t ** 2
            var_p = sums['sum_pp'] / n - mean_p ** 2
            cov = sums['sum_tp'] / n - mean_t * mean_p
            denom = math.sqrt(max(var_t, 0.0) * max(var_p, 0.0))
            corr = cov / denom if denom > 1e-15 else math.nan
            split_rmse = group['rmse'].to_numpy(dtype=float)
            se = float(np.std(split_rmse, ddof=1) / math.sqrt(len(group))) \
                if len(group) > 1 else math.nan
            lps = sums['lps_sum'] / sums['lps_cells'] \
                if sums['lps_cells'] > 0 else math.nan
            rows.append(dict(zip(keys, key), rmse=math.sqrt(sums['sse'] / n),
                             mae=sums['sae'] / n, corr=corr, lps=lps,
                             rmse_se=se, n_splits=len(group),
                             n_cells=int(n)))
        frame = pd.DataFrame(rows, columns=keys + [
            'rmse', 'mae', 'corr', 'lps', 'rmse_se', 'n_splits', 'n_cells'])
        for column in ('Q', 'R', 'horizon'):
            frame[column] = _nullable_int(frame[column])
        return frame

    def save(self, path, predictions=True):
        path = pathlib.Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.frame.to_csv(path, index=False)
        if predictions and len(self.predictions):
            self.predictions.to_csv(
                path.with_name(path.stem + '_predictions.csv'), index=False)
        return path

    @classmethod
    def load(cls, path):
        path = pathlib.Path(path)
        frame = pd.read_csv(path)
        missing = set(COLUMNS) - set(frame.columns)
        if missing:
            raise ValidationError(
                '%s is not an evaluation report; missing column(s) %s'
                % (path, ', '.join(sorted(missing))))
        frame = frame[list(COLUMNS)].astype({'model': str, 'status': str})
        rows = frame.astype(object).where(frame.notna(), math.nan) \
            .to_dict('records')
        sidecar = path.with_name(path.stem + '_predictions.csv')
        predictions = pd.read_csv(sidecar) if sidecar.exists() else None
        return cls(rows, predictions)


def _prediction_frame(model, Q, R, horizon, split, panel, cells, truth,
                      pred):
    i, t, x = cells
    return pd.DataFrame({
        'model': model, 'Q': Q, 'R': R, 'horizon': horizon, 'split': split,
        'population': np.asarray(panel.population_labels, dtype=object)[i],
        'year': np.asarray(panel.year_labels)[t],
        'age': np.asarray(panel.age_labels, dtype=object)[x],
        'truth': truth, 'pred': pred})


def _run_jobs(jobs, threads):
    '''
    Run callables, in parallel when threads > 1; results keep job order.
    '''
    if threads <= 1:
        return [job() for job in jobs]
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: job(), jobs))


# ---------------------------------------------------------------------------
# Cross-validation


def _cv_job(panel, fold_mask, Q, R, fold, config, seed, prior_kwargs):
    cells = np.nonzero(fold_mask)
    sampler = dataclasses.replace(config, rng_seed=job_seed(seed, Q, R, fold))
    try:
        prior = PriorSpec(Q=Q, R=R, **prior_kwargs)
        store = run_chain(panel.with_mask(panel.mask & ~fold_mask), prior,
                          sampler, watch_mask=fold_mask)
    except Error as e:
        logger.error('cv Q=%d R=%d fold %d failed: %s', Q, R, fold, e)
        return _row(MATRIX_FACTOR, Q, R, None, fold, status='failed'), None
    if store.error or store.n_draws == 0:
        logger.error('cv Q=%d R=%d fold %d failed: %s', Q, R, fold,
                     store.error or 'no retained draws')
        return _row(MATRIX_FACTOR, Q, R, None, fold, status='failed'), None

    z = store.watched_draws()
    y, O = panel.counts[fold_mask], panel.offsets[fold_mask]
    rng = np.random.default_rng(job_seed(seed, Q, R, fold, 1))
    truth = np.log1p(y.astype(float))
    pred = predictive_log_mean(z, O, rng)
    lps = log_predictive_scores(y, O, z)
    row = _row(MATRIX_FACTOR, Q, R, None, fold, truth, pred, lps)
    return row, _prediction_frame(MATRIX_FACTOR, Q, R, None, fold, panel,
                                  cells, truth, pred)


def run_cv_grid(panel, Q_range, R_range, config=None, k=10, seed=0,
                threads=1, prior_kwargs=None):
    '''
    k-fold cell-wise cross-validation of the matrix factor model over every
    (Q, R) in the grid. Each (Q, R, fold) job is seeded from (seed, Q, R,
    fold), so the report does not depend on threads or job order.
    '''
    Q_range, R_range = list(Q_range), list(R_range)
    if not Q_range or not R_range:
        raise ValidationError('cv grid is empty')
    config = config or SamplerConfig()
    prior_kwargs = dict(prior_kwargs or {})
    folds = cv_partition(panel, k, np.random.default_rng(job_seed(seed)))
    jobs = [(lambda Q=Q, R=R, f=f, m=m: _cv_job(panel, m, Q, R, f, config,
                                                seed, prior_kwargs))
            for Q in Q_range for R in R_range for f, m in enumerate(folds)]
    logger.info('cv grid: %d (Q, R) pairs x %d folds on %d thread(s)',
                len(Q_range) * len(R_range), len(folds), threads)
    results = _run_jobs(jobs, threads)
    predictions = [p for _, p in results if p is not None]
    return EvalReport([row for row, _ in results],
                      pd.concat(predictions, ignore_index=True)
                      if predictions else None)


def select_one_se(report, metric='rmse'):
    '''
    Most parsimonious (Q, R) whose mean fold metric lies within one standard
    error of the best. Parsimony is Q * R, then Q + R. lps is maximized,
    everything else minimized. Returns ((Q, R), table with a within_one_se
    flag).
    '''
    if metric not in ('rmse', 'mae', 'corr', 'lps'):
        raise ValidationError('unknown metric %r' % metric)
    ok = report.frame[(report.frame['status'] == 'ok') &
                      (report.frame['model'] == MATRIX_FACTOR)]
    if ok.empty:
        raise ValidationError('report has no successful matrix factor rows')
    table = ok.groupby(['Q', 'R'])[metric].agg(['mean', 'std', 'count']) \
        .reset_index()
    table['se'] = (table['std'] / np.sqrt(table['count'])).fillna(0.0)
    sign = -1.0 if metric in ('corr', 'lps') else 1.0
    score = sign * table['mean']
    best = score.idxmin()
    threshold = score[best] + table.loc[best, 'se']
    table['within_one_se'] = score <= threshold
    candidates = table[table['within_one_se']].assign(
        size=lambda f: f['Q'] * f['R'], span=lambda f: f['Q'] + f['R'],
        score=score)
    pick = candidates.sort_values(['size', 'span', 'score']).iloc[0]
    return (int(pick['Q']), int(pick['R'])), table.drop(columns='std')


# ---------------------------------------------------------------------------
# Rolling-origin forecasts


@dataclasses.dataclass
class RollingScheme:
    '''
    n_windows training windows of train_length years ending just before the
    last n_windows years. The shortest horizon is forecast from every window;
    longer horizons from the first window only.
    '''
    train_length: int = 17
    n_windows: int = 5
    horizons: tuple = (1, 5)

    def __post_init__(self):
        if isinstance(self.horizons, int):
            self.horizons = (self.horizons,)
        self.horizons = tuple(sorted(int(h) for h in self.horizons))
        if self.train_length < 2 or self.n_windows < 1 or \
                not self.horizons or self.horizons[0] < 1:
            raise ValidationError('rolling scheme needs train_length >= 2, '
                                  'n_windows >= 1 and horizons >= 1')

    def splits(self, T):
        '''
        (window, train_start, train_stop, horizons) per window.
        '''
        first = T - self.train_length - self.n_windows
        if first < 0:
            raise ValidationError('scheme needs T >= %d, panel has T=%d'
                                  % (self.train_length + self.n_windows, T))
        out = []
        for w in range(self.n_windows):
            start, stop = first + w, first + w + self.train_length
            hs = self.horizons if w == 0 else self.horizons[:1]
            hs = tuple(h for h in hs if stop - 1 + h < T)
            if len(hs) < (len(self.horizons) if w == 0 else 1):
                raise ValidationError('horizon %d from window %d runs past '
                                      'the panel' % (max(self.horizons), w))
            out.append((w, start, stop, hs))
        return out

    _KEYS = ('train_length', 'n_windows', 'horizons')

    @classmethod
    def from_config(cls, config, **overrides):
        config = dict(config, **overrides)
        check_keys(config, cls._KEYS, 'rolling scheme')
        return cls(**config)

    def to_config(self):
        return {'train_length': self.train_length,
                'n_windows': self.n_windows,
                'horizons': list(self.horizons)}


@dataclasses.dataclass(frozen=True)
class MatrixFactorSpec:
    '''
    The matrix factor model fitted by MCMC (bmf), or its two-step
    approximation: the initialize_auto estimate forecast along its drift.
    '''
    Q: int
    R: int
    method: str = MATRIX_FACTOR

    @property
    def label(self):
        return '%s:%d:%d' % (self.method, self.Q, self.R)


def parse_model(text):
    '''
    'bmf:Q:R', 'two_step:Q:R' or a benchmark spec such as 'rw' or
    'time_fact_joint:3'.
    '''
    text = str(text).strip()
    method = text.split(':', 1)[0]
    if method in (MATRIX_FACTOR, TWO_STEP):
        parts = text.split(':')
        if len(parts) != 3:
            raise ValidationError('matrix factor spec must be %s:Q:R, got %r'
                                  % (method, text))
        try:
            return MatrixFactorSpec(int(parts[1]), int(parts[2]), method)
        except ValueError:
            raise ValidationError('Bad matrix factor spec %r' % text)
    return BenchmarkSpec.parse(text)


def _spec_qr(spec):
    if isinstance(spec, MatrixFactorSpec):
        return spec.Q, spec.R
    if spec.kind.startswith('time_fact'):
        return spec.n_factors, None
    if spec.kind.startswith('age_fact'):
        return None, spec.n_factors
    return None, None


def _truth_cells(panel, year_index):
    mask = panel.mask[:, year_index, :]
    truth = np.log1p(panel.counts[:, year_index, :].astype(float))
    return mask, truth


def _window_job(panel, spec, window, start, stop, horizons, config, seed,
                prior_kwargs):
    train = panel.window(start, stop)
    model = spec.method if isinstance(spec, MatrixFactorSpec) else spec.kind
    Q, R = _spec_qr(spec)
    rows, frames = [], []
    try:
        if isinstance(spec, MatrixFactorSpec) and spec.method == TWO_STEP:
            state = initialize_auto(
                train, PriorSpec(Q=spec.Q, R=spec.R, **prior_kwargs),
                np.random.default_rng(job_seed(seed, spec.Q, spec.R, window)))
            points = forecast_two_step(state, train, max(horizons)) \
                .point_forecast()
            forecasts = {h: points[:, h - 1, :] for h in horizons}
            latent = {}
        elif isinstance(spec, MatrixFactorSpec):
            sampler = dataclasses.replace(
                config, keep_factors=True,
                rng_seed=job_seed(seed, spec.Q, spec.R, window))
            store = run_chain(train, PriorSpec(Q=spec.Q, R=spec.R,
                                               **prior_kwargs), sampler)
            if store.error or store.n_draws == 0:
                raise Error(store.error or 'no retained draws')
            fs = forecast_counts(store, train, max(horizons), job_seed(
                seed, spec.Q, spec.R, window, 1))
            points = fs.point_forecast()
            forecasts = {h: points[:, h - 1, :] for h in horizons}
            latent = {h: fs.latent_draws[:, :, h - 1, :] for h in horizons}
        else:
            forecaster = AutoForecaster(spec)
            forecasts = forecaster.forecast_many(to_log_panel(train),
                                                 horizons)
            latent = {}
    except Error as e:
        logger.error('%s window %d failed: %s', getattr(spec, 'label', spec),
                     window, e)
        return [_row(model, Q, R, h, window, status='failed')
                for h in horizons], []

    for h in horizons:
        target = stop - 1 + h
        mask, truth = _truth_cells(panel, target)
        if not mask.any():
            rows.append(_row(model, Q, R, h, window, status='empty'))
            continue
        pred = forecasts[h][mask]
        lps = None
        if h in latent:
            lps = log_predictive_scores(panel.counts[:, target, :][mask],
                                        panel.offsets[:, target, :][mask],
                                        latent[h][:, mask])
        rows.append(_row(model, Q, R, h, window, truth[mask], pred, lps))
        i, x = np.nonzero(mask)
        frames.append(_prediction_frame(
            model, Q, R, h, window, panel,
            (i, np.full(len(i), target), x), truth[mask], pred))
    return rows, frames


def run_forecast_eval(panel, specs, scheme=None, config=None, seed=0,
                      threads=1, prior_kwargs=None):
    '''
    Fit every model spec on every rolling window and score its point
    forecasts on the held-out years. specs mixes MatrixFactorSpec and
    BenchmarkSpec (or their text forms).
    '''
    scheme = scheme or RollingScheme()
    config = config or SamplerConfig()
    prior_kwargs = dict(prior_kwargs or {})
    specs = [parse_model(s) if isinstance(s, str) else s for s in specs]
    if not specs:
        raise ValidationError('no models to evaluate')
    splits = scheme.splits(panel.dims[1])
    jobs = [(lambda s=s, w=w: _window_job(panel, s, *w, config, seed,
                                          prior_kwargs))
            for s in specs for w in splits]
    logger.info('forecast evaluation: %d model(s) x %d window(s)',
                len(specs), len(splits))
    results = _run_jobs(jobs, threads)
    rows = [row for job_rows, _ in results for row in job_rows]
    frames = [f for _, job_frames in results for f in job_frames]
    return EvalReport(rows, pd.concat(frames, ignore_index=True)
                      if frames else None)


def best_by_rmse(report):
    '''
    Per model and horizon, the (Q, R) setting with the lowest pooled RMSE.
    '''
    summary = report.summary()
    if summary.empty:
        return summary
    best = summary.loc[summary.groupby(['model', 'horizon'], dropna=False)
                       ['rmse'].idxmin()]
    return best.reset_index(drop=True)


def _model_order(models):
    order = [MATRIX_FACTOR, TWO_STEP, 'rw', 'rw_drift', 'time_fact_sep',
             'time_fact_joint', 'age_fact_sep', 'age_fact_joint']
    return sorted(models, key=lambda m: (order.index(m) if m in order
                                         else len(order), m))


def format_table(report):
    '''
    One line per model, and per horizon the selected Q and R with RMSE, MAE
    and correlation. Returns (text, DataFrame).
    '''
    best = best_by_rmse(report)
    horizons = sorted(h for h in best['horizon'].dropna().unique())
    if best['horizon'].isna().any():
        horizons = [None] + horizons
    records = []
    for model in _model_order(best['model'].unique()):
        record = {'Model': model}
        for h in horizons:
            suffix = '' if h is None else ' h=%d' % h
            at = best['horizon'].isna() if h is None else \
                (best['horizon'] == h).fillna(False).astype(bool)
            sel = best[(best['model'] == model) & at]
            if sel.empty:
                continue
            row = sel.iloc[0]
            record.update({
                'Q' + suffix: '-' if pd.isna(row['Q']) else int(row['Q']),
                'R' + suffix: '-' if pd.isna(row['R']) else int(row['R']),
                'RMSE' + suffix: round(float(row['rmse']), 3),
                'MAE' + suffix: round(float(row['mae']), 3),
                'Corr' + suffix: round(float(row['corr']), 3)
                if not pd.isna(row['corr']) else math.nan})
        records.append(record)
    table = pd.DataFrame(records)
    return table.to_string(index=False, na_rep='-'), table
