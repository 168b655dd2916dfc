# SPDX-FileCopyrightText: 2026 matfac-o-matic contributors
#
# SPDX-License-Identifier: LGPL-3.0-only

import importlib

from matfac_o_matic.bench.base import BenchmarkSpec
from matfac_o_matic.errors import ValidationError

# Note: This is NOT dict, because order matters.
#       Reports list the benchmarks in this order.
#
_registry = (
    ('rw',              'randomwalk'),
    ('rw_drift',        'randomwalk'),
    ('time_fact_sep',   'timefact'),
    ('time_fact_joint', 'timefact'),
    ('age_fact_sep',    'agefact'),
    ('age_fact_joint',  'agefact'),
)


def _known_kinds():
    '''
    List known benchmark kinds.
    '''
    return [kind for kind, lib in _registry]


def _bench_libname(kind):
    '''
    Convert a kind to a libname.
    '''
    try:
        return 'matfac_o_matic.bench.{}'.format(dict(_registry)[kind])
    except KeyError:
        raise ValidationError('Unknown benchmark kind %r; known: %s'
                              % (kind, ', '.join(_known_kinds())))


def AutoForecaster(spec):
    """
    Load and instantiate the forecaster for a BenchmarkSpec (or its text
    form, e.g. 'time_fact_joint:3').
    """
    if not isinstance(spec, BenchmarkSpec):
        spec = BenchmarkSpec.parse(spec)
    impl = importlib.import_module(_bench_libname(spec.kind))
    return impl.Forecaster(spec)


def default_specs(max_factors=10):
    '''
    The six families, factor models at every n_factors up to max_factors.
    '''
    specs = []
    for kind in _known_kinds():
        if kind.startswith('rw'):
            specs.append(BenchmarkSpec(kind))
        else:
            specs.extend(BenchmarkSpec(kind, k)
                         for k in range(1, max_factors + 1))
    return specs
