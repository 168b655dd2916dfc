#!/usr/bin/python3
# SPDX-FileCopyrightText: 2026 matfac-o-matic contributors
#
# SPDX-License-Identifier: LGPL-3.0-only
#
# End-to-end run of the command line on the reduced simulation preset:
# simulate -> fit -> forecast -> postprocess -> benchmark -> report.
# Usage: pipeline-test.py [workdir] [iterations]

import os.path
import subprocess
import sys
import tempfile
import copy

def readlink_f( path ):
    while True:
        try:
            path = os.readlink( path )
        except (OSError, AttributeError):
            break
    return os.path.abspath( path )

def format_pod( template, **kwargs ):
    '''
    apply str.format to all str elements of a simple object tree template
    '''
    if isinstance( template, dict ):
        template = { format_pod( key, **kwargs ): format_pod( value, **kwargs ) for (key,value) in list(template.items()) }
    elif isinstance( template, str ):
        template = template.format( **kwargs )
    elif isinstance( template, list ):
        template = [ format_pod( value, **kwargs ) for value in template ]
    else:
        template = copy.copy( template )

    return template

class TestSession( object ):
    '''
    Test session for scripting the matfac-o-matic command line
    '''

    def __init__( self, parameters, log = "pipeline-test.log" ):
        self.parameters = parameters
        self.log = log
        self.failures = []
        with open( log, "w" ):
            pass

    def command( self, template ):
        args = format_pod( template, **self.parameters )
        cmd = [ sys.executable, '-m', 'matfac_o_matic' ] + args
        print( '$ matfac-o-matic ' + ' '.join( args ) )
        with open( self.log, "a" ) as handle:
            handle.write( '$ ' + ' '.join( cmd ) + '\n' )
            handle.flush()
            code = subprocess.call( cmd, stdout=handle, stderr=handle,
                                    cwd=self.parameters['repodir'] )
        if code != 0:
            print( '  -> exit status {}'.format( code ) )
            self.failures.append( (args[0], code) )
        return code

    def expect( self, *paths ):
        for path in paths:
            path = format_pod( path, **self.parameters )
            if not os.path.exists( path ):
                print( '  -> missing {}'.format( path ) )
                self.failures.append( ('missing', path) )

    def close( self ):
        if self.failures:
            print( 'FAILED: {}'.format( self.failures ) )
            print( 'see {}'.format( self.log ) )
            return 1
        print( 'OK, log in {}'.format( self.log ) )
        return 0

basedir = os.path.split( readlink_f( sys.argv[ 0 ] ) )[ 0 ]
workdir = os.path.abspath( sys.argv[ 1 ] ) if len( sys.argv ) > 1 else tempfile.mkdtemp( prefix='matfac-' )
iterations = int( sys.argv[ 2 ] ) if len( sys.argv ) > 2 else 3000
os.makedirs( workdir, exist_ok=True )

session = TestSession( parameters = {
    'repodir': os.path.split( basedir )[ 0 ],
    'work': workdir,
    'iterations': str( iterations ),
    'burnin': str( iterations // 3 ),
}, log = os.path.join( workdir, 'pipeline-test.log' ) )

session.command( [ 'simulate', '--preset', 'reduced', '--seed', '1',
                   '--out', '{work}/sim' ] )
session.expect( '{work}/sim/panel.csv', '{work}/sim/truth/Z.npy' )

session.command( [ 'params', '--N', '10', '--Q', '3', '--R', '3',
                   '--A', '20', '--T', '15' ] )

session.command( [ 'fit', '--data', '{work}/sim/panel.csv',
                   '--out', '{work}/fit', '--Q', '3', '--R', '3',
                   '--iterations', '{iterations}', '--burnin', '{burnin}',
                   '--seed', '1' ] )
session.expect( '{work}/fit/draws/manifest.txt', '{work}/fit/run_manifest.txt' )

session.command( [ 'forecast', '--fit-dir', '{work}/fit', '--horizon', '5' ] )
session.expect( '{work}/fit/forecast/forecast_summary.csv' )

session.command( [ 'postprocess', '--fit-dir', '{work}/fit',
                   '--truth', '{work}/sim/truth' ] )
session.expect( '{work}/fit/postprocess/factors_time.csv',
                '{work}/fit/postprocess/factors_age.csv',
                '{work}/fit/postprocess/explained.csv',
                '{work}/fit/postprocess/recovery.csv' )

session.command( [ 'benchmark', '--data', '{work}/sim/panel.csv',
                   '--spec', 'rw', '--spec', 'rw_drift',
                   '--spec', 'time_fact_sep:2', '--spec', 'time_fact_joint:3',
                   '--spec', 'age_fact_sep:2', '--spec', 'age_fact_joint:3',
                   '--train-length', '8', '--windows', '5',
                   '--horizons', '1,5', '--out', '{work}/bench' ] )
session.expect( '{work}/bench/forecast_eval.csv' )

session.command( [ 'report', '--inputs', '{work}/bench/forecast_eval.csv',
                   '--out', '{work}/report' ] )
session.expect( '{work}/report/table.txt', '{work}/report/summary.csv' )

sys.exit( session.close() )
