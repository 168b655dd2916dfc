# SPDX-FileCopyrightText: 2026 matfac-o-matic contributors
#
# SPDX-License-Identifier: LGPL-3.0-only

import argparse
import logging
import sys

from matfac_o_matic import __version__
from matfac_o_matic.control import PipelineControl, configure_logging
from matfac_o_matic.errors import ValidationError

logger = logging.getLogger('matfac_o_matic')

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # Usage errors share the validation exit status.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, '%s: error: %s\n' % (self.prog, message))


def _common(parser):
    parser.add_argument('--seed', type=int, default=None,
                        help='master random seed (default: from config, 0)')
    parser.add_argument('--threads', type=int, default=1,
                        help='worker threads for grid jobs (default: 1)')


def _sampler_flags(parser):
    parser.add_argument('--prior', default=None,
                        help='prior key=value file (c0=2.5, C0=1.5, L0=1)')
    parser.add_argument('--sampler', default=None,
                        help='sampler key=value file (25000 iterations, '
                             '7500 burn-in)')


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog='matfac-o-matic',
                     description='Bayesian Poisson-lognormal matrix factor '
                                 'models for population x year x age '
                                 'counts.', formatter_class=fmt)
    parser.add_argument('--version', action='version',
                        version='%(prog)s ' + __version__)
    parser.add_argument('-v', '--verbose', action='store_true',
                        help='debug logging')
    parser.add_argument('-q', '--quiet', action='store_true',
                        help='warnings and errors only')
    sub = parser.add_subparsers(dest='command', metavar='command',
                                parser_class=_Parser)
    sub.required = True

    p = sub.add_parser('simulate', help='draw a synthetic panel',
                       formatter_class=fmt)
    p.add_argument('--config', default=None,
                   help='simulation key=value file')
    p.add_argument('--preset', choices=('full', 'reduced'), default='full',
                   help='N=50 T=30 A=40, or N=10 T=15 A=20')
    p.add_argument('--out', required=True, help='output directory')
    _common(p)

    p = sub.add_parser('fit', help='run the MCMC sampler',
                       formatter_class=fmt)
    p.add_argument('--data', required=True, help='long-format count CSV')
    p.add_argument('--out', required=True, help='output directory')
    p.add_argument('--Q', type=int, default=None, help='time factors')
    p.add_argument('--R', type=int, default=None, help='age factors')
    p.add_argument('--iterations', type=int, default=None,
                   help='sweeps including burn-in (default 25000)')
    p.add_argument('--burnin', type=int, default=None,
                   help='discarded sweeps (default 7500)')
    p.add_argument('--thin', type=int, default=None,
                   help='keep every n-th draw (default 1)')
    p.add_argument('--init-only', action='store_true',
                   help='write the two-step SVD estimate and stop')
    p.add_argument('--keep-latent', action='store_true',
                   help='also store every latent Z draw')
    _sampler_flags(p)
    _common(p)

    p = sub.add_parser('forecast', help='posterior predictive forecasts',
                       formatter_class=fmt)
    p.add_argument('--fit-dir', required=True)
    p.add_argument('--horizon', type=int, required=True,
                   help='years ahead')
    p.add_argument('--out', default=None,
                   help='output directory (default FIT_DIR/forecast)')
    p.add_argument('--no-idiosyncratic', action='store_true',
                   help='leave the N(0, sigma^2) term out of future z')
    p.add_argument('--raw-draws', action='store_true',
                   help='also write the raw draw arrays')
    _common(p)

    p = sub.add_parser('cv', help='cross-validate a (Q, R) grid',
                       formatter_class=fmt)
    p.add_argument('--data', required=True)
    p.add_argument('--q-range', default='1-10')
    p.add_argument('--r-range', default='1-10')
    p.add_argument('--folds', type=int, default=10)
    p.add_argument('--out', required=True)
    _sampler_flags(p)
    _common(p)

    p = sub.add_parser('benchmark', help='rolling-origin forecast '
                       'evaluation', formatter_class=fmt)
    p.add_argument('--data', required=True)
    p.add_argument('--spec', action='append', default=None,
                   help='model: rw, rw_drift, <kind>:<n_factors> or '
                        'bmf:Q:R; repeatable')
    p.add_argument('--train-length', type=int, default=17)
    p.add_argument('--windows', type=int, default=5)
    p.add_argument('--horizons', default='1,5')
    p.add_argument('--scheme', default=None,
                   help='rolling scheme key=value file (overrides the '
                        'three flags above)')
    p.add_argument('--out', required=True)
    _sampler_flags(p)
    _common(p)

    p = sub.add_parser('postprocess', help='ex-post HOSVD factors',
                       formatter_class=fmt)
    p.add_argument('--fit-dir', required=True)
    p.add_argument('--out', default=None,
                   help='output directory (default FIT_DIR/postprocess)')
    p.add_argument('--Q', type=int, default=None)
    p.add_argument('--R', type=int, default=None)
    p.add_argument('--truth', default=None,
                   help='truth/ directory from simulate, for a recovery '
                        'report')

    p = sub.add_parser('report', help='merge evaluation reports into a '
                       'table', formatter_class=fmt)
    p.add_argument('--inputs', nargs='+', required=True)
    p.add_argument('--out', default=None)

    p = sub.add_parser('params', help='population-specific parameter counts',
                       formatter_class=fmt)
    for name in ('N', 'Q', 'R', 'A', 'T'):
        p.add_argument('--' + name, type=int, required=True)
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    kwargs = {k: v for k, v in vars(args).items()
              if k not in ('command', 'verbose', 'quiet')}
    try:
        PipelineControl(argv).do(args.command, kwargs)
    except ValidationError as e:
        logger.error('%s', e)
        logger.debug('traceback', exc_info=True)
        return EXIT_INVALID
    except Exception as e:
        logger.error('%s failed: %s', args.command, e)
        logger.debug('traceback', exc_info=True)
        return EXIT_FAILED
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
