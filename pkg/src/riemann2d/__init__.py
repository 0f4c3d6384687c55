"""Two-dimensional self-similar Riemann problems with transonic shocks.

Subpackages: gas models and residual checks (models), planar wave algebra
(waves), free-boundary curve machinery (shock), degenerate-elliptic interior
solver (elliptic), outer free-boundary fixed point (fbsolve), finite-volume
oracle (fv), artifact/report layer and CLI (reportdoc, cli).
"""

__version__ = "0.1.0"
