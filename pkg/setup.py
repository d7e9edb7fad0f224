from setuptools import setup

setup(
    name = 'hingecells',
    packages = ['hingecells'],
    version = '1.0',
    license='GPLv3',
    description = 'Cell structure, criticality and minimum analysis of hinge-loss ReLU networks',
    author = 'hingecells contributors',
    keywords = ['RELU', 'HINGE LOSS', 'LOSS LANDSCAPE', 'NONSMOOTH OPTIMIZATION', 'CLARKE SUBDIFFERENTIAL'],
    install_requires=[
        'numpy>=1.20',
        'scipy>=1.6',
        'argparse>=1.1',
        'python-dateutil>=2.8',
    ],
    extras_require={
        'test': [
            'pytest>=6.0',
        ],
    },
    classifiers=[
        'Development Status :: 4 - Beta',
        'Intended Audience :: Science/Research',
        'Topic :: Scientific/Engineering :: Mathematics',
        'License :: OSI Approved :: GNU General Public License v3 (GPLv3)',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
    ],
    entry_points={
        'console_scripts': [
            'hingecells = hingecells.__main__:main'
        ]
    }
)
