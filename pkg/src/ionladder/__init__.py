"""Simulation toolkit for frustrated spin models in trapped-ion ladders.

Modules: ``crystal`` (equilibria and leg census), ``phonons`` (normal modes),
``couplings`` (phonon-mediated Ising couplings), ``dynamics`` (spin-phonon
evolution with dephasing), ``ising`` (exact diagonalization), ``error_budget``
(Lambda-scheme, micromotion, thermal and heating errors) and ``cli``.
"""

__version__ = "0.1.0"
