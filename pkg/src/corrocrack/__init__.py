"""corrocrack: chemo-mechanical FEM simulation of corrosion-induced cracking
in reinforced concrete cross-sections.

Couples reactive transport and precipitation of dissolved iron species, a
precipitation eigenstrain for rust pressure under pore confinement, and a
quasi-brittle phase-field fracture model with damage-enhanced diffusivity.
"""

__version__ = "0.1.0"
