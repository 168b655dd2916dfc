#!/usr/bin/python3
# -*- coding: utf-8 -*-
#
# SPDX-FileCopyrightText: 2026 matfac-o-matic contributors
#
# SPDX-License-Identifier: LGPL-3.0-only

import pathlib
import setuptools
from os import path

# Do not edit: The VERSION gets updated by the update-version script.
VERSION = '0.1.0'

here = pathlib.Path(__file__).parent.resolve()

with open(path.join(here, 'README.md'), encoding='utf-8') as f:
    long_description = f.read()

setuptools.setup(
    name='matfac-o-matic',
    version=VERSION,
    author='matfac-o-matic contributors',
    description='Bayesian Poisson-lognormal matrix factor models for '
                'demographic count panels',
    long_description=long_description,
    long_description_content_type='text/markdown',
    license='LGPLv3',
    packages=setuptools.find_packages(include=['matfac_o_matic',
                                               'matfac_o_matic.*']),
    keywords='demography, factor model, mcmc, forecasting, poisson',
    entry_points={
        'console_scripts': ['matfac-o-matic = matfac_o_matic.__main__:main']
    },
    classifiers=[
        'Development Status :: 4 - Beta',
        'Environment :: Console',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: GNU Lesser General Public License v3 (LGPLv3)',
        'Operating System :: OS Independent',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3 :: Only',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
        'Programming Language :: Python :: 3.12',
        'Topic :: Scientific/Engineering :: Mathematics',
    ],
    python_requires='>=3.9',
    install_requires=['numpy>=1.22', 'scipy>=1.8', 'pandas>=1.4'],
    extras_require={'test': ['pytest>=7']},
)
