__version__ = '0.1.0'
from setuptools import setup, find_packages

# README read-in
from os import path
this_directory = path.abspath(path.dirname(__file__))
with open(path.join(this_directory, 'README.rst'), encoding='utf-8') as f:
    long_description = f.read()
# END README read-in

setup(
    name='sparse-obs',
    version=__version__,
    packages=find_packages(),
    package_data={'sparse_obs': ['assets/*', 'assets/configs/*']},
    description='Observation systems on sparse random factor graphs: exact posteriors, belief propagation, '
                'density evolution and desk-scale bound checks',
    long_description=long_description,
    long_description_content_type='text/x-rst',
    install_requires=[
        'numpy >= 1.20',
        'scipy >= 1.7',
        'networkx >= 2.6'
    ],
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Programming Language :: Python',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
    ],
    entry_points='''
        [console_scripts]
        sparse-obs=sparse_obs.cli:main
    ''',
)
