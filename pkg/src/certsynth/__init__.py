"""Control certificate synthesis for switched polynomial systems.

Finds control Lyapunov-barrier functions, control barrier functions, and
control Lyapunov fixed-barriers functions by counterexample-guided inductive
synthesis, and extracts provably correct switched feedback controllers.
"""

from certsynth.intervals import Interval, Box
from certsynth.poly import Polynomial, parse_poly

__all__ = ["Interval", "Box", "Polynomial", "parse_poly"]
