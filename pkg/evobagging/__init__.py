# -*- coding :utf-8 -*-

"""Evolutionary bagging: bag-rewriting ensembles of decision trees, baselines and experiment tooling."""

__version__ = "0.1.0" #0.1.0 is the version number of the package
