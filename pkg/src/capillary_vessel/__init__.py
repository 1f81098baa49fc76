"""Viscous fluid in an open-top vessel with moving contact points.

Modules: ``core_params`` (constants and contact law), ``equilibrium``
(capillary profile under a mass constraint), ``spectral`` (gravity-capillary
operator and its functional calculus), ``geometry`` (flattening map and
coefficient fields), ``dynamics`` (semi-implicit time integration and
energy diagnostics) and ``cli``.
"""

__version__ = "0.1.0"
