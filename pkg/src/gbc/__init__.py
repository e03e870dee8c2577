"""Generative Bayesian computation via quantile-network transport maps.

Simulate reference tables from prior x forward model, learn summary
statistics and implicit quantile networks that map (summary, uniform) to
posterior draws, and validate against conjugate closed forms and rejection
baselines.

Submodules are imported directly (``from gbc import quantile``); this
package root stays import-light so the CLI can pin threading environment
variables before numpy loads.
"""

__version__ = "0.1.0"
