# SPDX-FileCopyrightText: 2026 matfac-o-matic contributors
#
# SPDX-License-Identifier: LGPL-3.0-only
#
# Command controller: one method per subcommand, dispatched by name. Every
# command writes its artifacts plus a run manifest into its output folder.

import hashlib
import logging
import pathlib
import platform
import shlex
import sys

import numpy as np
import pandas as pd
import scipy

import matfac_o_matic
from matfac_o_matic.config import load_config, save_config
from matfac_o_matic.errors import ValidationError
from matfac_o_matic.evaluate import (EvalReport, RollingScheme, format_table,
                                     parse_model, run_cv_grid,
                                     run_forecast_eval, select_one_se)
from matfac_o_matic.model.forecast import forecast_counts, forecast_two_step
from matfac_o_matic.model.hosvd import (center_fitted_array, fitted_array,
                                        hosvd_modes)
from matfac_o_matic.model.panel import load_panel, write_panel
from matfac_o_matic.model.priors import PriorSpec
from matfac_o_matic.model.sampler import initialize_auto, run_chain
from matfac_o_matic.model.state import DrawStore, ModelState, SamplerConfig
from matfac_o_matic.simulate import SimConfig, recovery_report, simulate_panel

logger = logging.getLogger(__name__)

MANIFEST = 'run_manifest.txt'
PANEL_COPY = 'panel.csv'


def count_parameters(N, Q, R, A, T):
    '''
    Population-specific parameter counts of the matrix factor model, the
    age factorization and the time factorization.
    '''
    for name, value in (('N', N), ('Q', Q), ('R', R), ('A', A), ('T', T)):
        if int(value) != value or value < 0:
            raise ValidationError('%s must be a nonnegative integer' % name)
    return N * Q * R + N, N * R * T + N, N * Q * A + N


def file_digest(path):
    digest = hashlib.sha256()
    with open(path, 'rb') as fd:
        for block in iter(lambda: fd.read(1 << 16), b''):
            digest.update(block)
    return digest.hexdigest()


def parse_range(text):
    '''
    '1-10', '2,4,6' or '3' to a list of ints.
    '''
    values = []
    for part in str(text).split(','):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition('-')
        try:
            if sep:
                values.extend(range(int(lo), int(hi) + 1))
            else:
                values.append(int(part))
        except ValueError:
            raise ValidationError('Bad range %r' % text)
    if not values or min(values) < 1:
        raise ValidationError('Range %r must list integers >= 1' % text)
    return sorted(set(values))


class PipelineControl(object):
    '''
    Runs one subcommand at a time. kwargs come straight from the argument
    parser, so names match the command-line flags.
    '''

    def __init__(self, argv=None):
        self.argv = list(argv or [])
        self.inputs = {}
        self.seeds = {}

    def do(self, command, kwargs):
        if not hasattr(self, 'cmd_' + command):
            raise ValidationError('Unknown command: %s' % command)
        return getattr(self, 'cmd_' + command)(**kwargs)

    # -- helpers ----------------------------------------------------------

    def _panel(self, path):
        self.inputs[str(path)] = file_digest(path)
        return load_panel(path)

    def _config(self, path):
        if path is not None:
            self.inputs[str(path)] = file_digest(path)
        return load_config(path)

    def _sampler(self, path, seed=None, **overrides):
        overrides = {k: v for k, v in overrides.items() if v is not None}
        if seed is not None:
            overrides['rng_seed'] = seed
        config = SamplerConfig.from_config(self._config(path), **overrides)
        self.seeds['sampler'] = config.rng_seed
        return config

    def _write_manifest(self, out, **extra):
        out = pathlib.Path(out)
        out.mkdir(parents=True, exist_ok=True)
        manifest = {
            'matfac_o_matic': matfac_o_matic.__version__,
            'python': platform.python_version(),
            'numpy': np.__version__,
            'scipy': scipy.__version__,
            'pandas': pd.__version__,
            'argv': shlex.join(self.argv) if self.argv else None,
        }
        manifest.update(('seed.%s' % k, v) for k, v in self.seeds.items())
        manifest.update(('input.%s' % pathlib.Path(k).name, v)
                        for k, v in self.inputs.items())
        manifest.update(extra)
        save_config(manifest, out / MANIFEST)

    # -- commands ---------------------------------------------------------

    def cmd_params(self, N, Q, R, A, T, **ignored):
        counts = count_parameters(N, Q, R, A, T)
        for label, value in zip(('matrix_factor', 'age_factorization',
                                 'time_factorization'), counts):
            print('%s=%d' % (label, value))
        return counts

    def cmd_simulate(self, out, config=None, preset='full', seed=None,
                     **ignored):
        overrides = {} if seed is None else {'rng_seed': seed}
        settings = self._config(config)
        if preset == 'reduced':
            cfg = SimConfig.from_config(dict(
                dict(N=10, T=15, A=20), **settings), **overrides)
        else:
            cfg = SimConfig.from_config(settings, **overrides)
        self.seeds['simulation'] = cfg.rng_seed
        panel, truth = simulate_panel(cfg)
        out = pathlib.Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_panel(panel, out / PANEL_COPY)
        truth.save(out / 'truth')
        save_config(cfg.to_config(), out / 'simulation.txt')
        self._write_manifest(out, command='simulate')
        logger.info('Wrote simulated panel to %s', out / PANEL_COPY)
        return panel, truth

    def cmd_fit(self, data, out, Q=None, R=None, prior=None, sampler=None,
                iterations=None, burnin=None, thin=None, seed=None,
                init_only=False, keep_latent=False, **ignored):
        panel = self._panel(data)
        prior_cfg = self._config(prior)
        prior_spec = PriorSpec.from_config(
            prior_cfg, **{k: v for k, v in (('Q', Q), ('R', R))
                          if v is not None})
        config = self._sampler(sampler, seed=seed, n_iterations=iterations,
                               n_burnin=burnin, thin=thin, keep_factors=True,
                               keep_latent=keep_latent or None)
        out = pathlib.Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_panel(panel, out / PANEL_COPY, include_offsets=True)
        save_config(prior_spec.to_config(), out / 'prior.txt')

        if init_only:
            state = initialize_auto(panel, prior_spec,
                                    np.random.default_rng(config.rng_seed))
            state.save(out / 'init')
            self._write_manifest(out, command='fit', init_only=True)
            return state

        store = run_chain(panel, prior_spec, config)
        store.save(out / 'draws')
        self._write_manifest(out, command='fit', run_id=store.run_id,
                             n_draws=store.n_draws)
        if store.error:
            raise RuntimeError('chain aborted: %s' % store.error)
        logger.info('Fit %s: %d draws written to %s', store.run_id,
                    store.n_draws, out / 'draws')
        return store

    def cmd_forecast(self, fit_dir, horizon, out=None, seed=None,
                     no_idiosyncratic=False, raw_draws=False, **ignored):
        fit_dir = pathlib.Path(fit_dir)
        panel = self._panel(fit_dir / PANEL_COPY)
        out = pathlib.Path(out) if out else fit_dir / 'forecast'
        if not (fit_dir / 'draws').is_dir():
            # fit --init-only: forecast the two-step estimate.
            if not (fit_dir / 'init').is_dir():
                raise ValidationError('%s has neither draws/ nor init/'
                                      % fit_dir)
            state = ModelState.load(fit_dir / 'init')
            fs = forecast_two_step(state, panel, horizon)
            fs.save(out, raw_draws=raw_draws)
            self._write_manifest(out, command='forecast', method='two_step')
            return fs
        store = DrawStore.load(fit_dir / 'draws')
        seed = store.config.rng_seed if seed is None else seed
        self.seeds['forecast'] = seed
        fs = forecast_counts(store, panel, horizon, seed,
                             include_idiosyncratic=not no_idiosyncratic)
        fs.save(out, raw_draws=raw_draws)
        self._write_manifest(out, command='forecast', run_id=store.run_id)
        return fs

    def cmd_cv(self, data, q_range, r_range, out, folds=10, prior=None,
               sampler=None, seed=None, threads=1, **ignored):
        panel = self._panel(data)
        config = self._sampler(sampler, keep_factors=False)
        seed = config.rng_seed if seed is None else seed
        self.seeds['master'] = seed
        report = run_cv_grid(panel, parse_range(q_range),
                             parse_range(r_range), config, k=folds,
                             seed=seed, threads=threads,
                             prior_kwargs=self._prior_kwargs(prior))
        out = pathlib.Path(out)
        report.save(out / 'cv_grid.csv')
        if len(report.failed) < len(report):
            (q, r), table = select_one_se(report)
            table.to_csv(out / 'cv_selection.csv', index=False)
            logger.info('One-standard-error choice: Q=%d R=%d', q, r)
        self._write_manifest(out, command='cv')
        return report

    def _prior_kwargs(self, path):
        kwargs = self._config(path)
        kwargs.pop('Q', None)
        kwargs.pop('R', None)
        return kwargs

    def cmd_benchmark(self, data, spec, out, train_length=17, windows=5,
                      horizons='1,5', scheme=None, prior=None, sampler=None,
                      seed=None, threads=1, **ignored):
        panel = self._panel(data)
        if scheme is not None:
            rolling = RollingScheme.from_config(self._config(scheme))
        else:
            rolling = RollingScheme(train_length, windows,
                                    tuple(parse_range(horizons)))
        config = self._sampler(sampler)
        seed = config.rng_seed if seed is None else seed
        self.seeds['master'] = seed
        specs = [parse_model(s) for s in (spec or ['rw'])]
        report = run_forecast_eval(panel, specs, rolling, config, seed=seed,
                                   threads=threads,
                                   prior_kwargs=self._prior_kwargs(prior))
        out = pathlib.Path(out)
        report.save(out / 'forecast_eval.csv')
        text, _ = format_table(report)
        print(text)
        self._write_manifest(out, command='benchmark')
        return report

    def cmd_postprocess(self, fit_dir, out=None, Q=None, R=None, truth=None,
                        **ignored):
        fit_dir = pathlib.Path(fit_dir)
        store = DrawStore.load(fit_dir / 'draws')
        panel = self._panel(fit_dir / PANEL_COPY)
        n, t, a, q, r = store.dims
        if store.fitted_mean is None:
            raise ValidationError('%s has no fitted means' % fit_dir)
        centered, _ = center_fitted_array(fitted_array(store.fitted_mean))
        result = hosvd_modes(centered, Q or q, R or r)
        out = pathlib.Path(out) if out else fit_dir / 'postprocess'
        result.save(out, panel.year_labels, panel.age_labels)
        if truth is not None:
            report = recovery_report(ModelState.load(truth), store, panel)
            report.save(out)
        self._write_manifest(out, command='postprocess',
                             run_id=store.run_id)
        return result

    def cmd_report(self, inputs, out=None, **ignored):
        if not inputs:
            raise ValidationError('report needs at least one input')
        report = EvalReport()
        for path in inputs:
            self.inputs[str(path)] = file_digest(path)
            report = report.merge(EvalReport.load(path))
        text, table = format_table(report)
        print(text)
        if out:
            out = pathlib.Path(out)
            out.mkdir(parents=True, exist_ok=True)
            (out / 'table.txt').write_text(text + '\n', encoding='utf-8')
            table.to_csv(out / 'table.csv', index=False)
            report.summary().to_csv(out / 'summary.csv', index=False)
            self._write_manifest(out, command='report')
        return table


def configure_logging(verbose=False, quiet=False):
    level = logging.DEBUG if verbose else \
        (logging.WARNING if quiet else logging.INFO)
    logging.basicConfig(
        level=level, stream=sys.stderr,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
