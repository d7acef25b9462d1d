from setuptools import setup, find_packages

setup(
    name='flowregion',
    version='0.1.0',
    packages=find_packages(
        exclude=['tests', 'tests.*', '*.__pycache__', '*.__pycache__.*'],
    ),
    scripts=['bin/flowregion'],

    install_requires=[
        'numpy',
        'scipy',
        'PyYAML',
    ],

    setup_requires=[
        'pytest-runner',
    ],

    tests_require=[
        'pytest',
        'hypothesis',
    ],
)
