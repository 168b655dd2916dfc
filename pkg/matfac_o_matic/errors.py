# SPDX-FileCopyrightText: 2026 matfac-o-matic contributors
#
# SPDX-License-Identifier: LGPL-3.0-only


class Error(Exception):
    '''
    Base class for errors raised by matfac-o-matic.
    '''
    pass


class ValidationError(Error, ValueError):
    '''
    Rejected input: malformed CSV rows, bad configuration, inconsistent dims.
    '''
    pass


class SamplerError(Error, RuntimeError):
    '''
    An MCMC iteration had to be aborted, e.g. because a conditional
    precision stayed non-SPD after the ridge was added.
    '''

    def __init__(self, message, diagnostics=None):
        Error.__init__(self, message)
        self.diagnostics = dict(diagnostics or {})
