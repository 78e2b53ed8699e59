"""Unit parsing for config values.

All internal arithmetic is done in SI base units (m, s, kg, mol, Pa, A).
Config files may carry values either as bare numbers (interpreted as SI)
or as strings "<number> <unit>" with the unit drawn from a closed table.
Every conversion factor is an exact power of ten times a small rational,
so converting and writing back is lossless.
"""

from __future__ import annotations


class UnitError(ValueError):
    """Raised for unknown units or dimension mismatches."""


# unit string -> (dimension, factor to SI)
_UNITS = {
    # length
    "m": ("length", 1.0),
    "cm": ("length", 1e-2),
    "mm": ("length", 1e-3),
    "um": ("length", 1e-6),
    # time
    "s": ("time", 1.0),
    "min": ("time", 60.0),
    "h": ("time", 3600.0),
    "day": ("time", 86400.0),
    "days": ("time", 86400.0),
    # pressure / modulus
    "Pa": ("pressure", 1.0),
    "kPa": ("pressure", 1e3),
    "MPa": ("pressure", 1e6),
    "GPa": ("pressure", 1e9),
    # fracture energy
    "N/m": ("energy_per_area", 1.0),
    "J/m2": ("energy_per_area", 1.0),
    # current density
    "A/m2": ("current_density", 1.0),
    "mA/cm2": ("current_density", 1e1),
    "uA/cm2": ("current_density", 1e-2),
    "uA/mm2": ("current_density", 1.0),
    # concentration
    "mol/m3": ("concentration", 1.0),
    "mol/L": ("concentration", 1e3),
    "mmol/L": ("concentration", 1.0),
    # mass density
    "kg/m3": ("mass_density", 1.0),
    "g/cm3": ("mass_density", 1e3),
    # molar mass
    "kg/mol": ("molar_mass", 1.0),
    "g/mol": ("molar_mass", 1e-3),
    # diffusivity
    "m2/s": ("diffusivity", 1.0),
    "mm2/s": ("diffusivity", 1e-6),
    # reaction rate constants
    "m3/mol/s": ("rate_second_order", 1.0),
    "L/mol/s": ("rate_second_order", 1e-3),
    "1/s": ("rate_first_order", 1.0),
    "1/day": ("rate_first_order", 1.0 / 86400.0),
    # charge
    "C/mol": ("charge_per_mol", 1.0),
    # dimensionless
    "-": ("dimensionless", 1.0),
    "1": ("dimensionless", 1.0),
    "%": ("dimensionless", 1e-2),
}

#: canonical unit used when writing a dimension back out
CANONICAL = {
    "length": "m",
    "time": "s",
    "pressure": "Pa",
    "energy_per_area": "N/m",
    "current_density": "A/m2",
    "concentration": "mol/m3",
    "mass_density": "kg/m3",
    "molar_mass": "kg/mol",
    "diffusivity": "m2/s",
    "rate_second_order": "m3/mol/s",
    "rate_first_order": "1/s",
    "charge_per_mol": "C/mol",
    "dimensionless": "-",
}


def parse_quantity(value, dimension: str, field: str = "") -> float:
    """Convert a config value to SI.

    ``value`` is either a number (already SI) or a string like
    ``"10 uA/cm2"``. The unit must belong to ``dimension``.
    """
    if isinstance(value, bool):
        raise UnitError(f"{field or 'value'}: expected a quantity, got a boolean")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise UnitError(f"{field or 'value'}: expected number or 'number unit' string")

    parts = value.split()
    if len(parts) == 1:
        num, unit = parts[0], None
    elif len(parts) == 2:
        num, unit = parts
    else:
        raise UnitError(f"{field or 'value'}: cannot parse quantity {value!r}")

    try:
        mag = float(num)
    except ValueError as exc:
        raise UnitError(f"{field or 'value'}: bad number in {value!r}") from exc

    if unit is None:
        return mag
    if unit not in _UNITS:
        raise UnitError(f"{field or 'value'}: unknown unit {unit!r} in {value!r}")
    dim, factor = _UNITS[unit]
    if dim != dimension:
        raise UnitError(
            f"{field or 'value'}: unit {unit!r} has dimension {dim}, expected {dimension}"
        )
    return mag * factor


def format_quantity(si_value: float, dimension: str) -> str:
    """Render an SI value with its canonical unit, full precision."""
    unit = CANONICAL[dimension]
    if unit == "-":
        return repr(float(si_value))
    return f"{si_value!r} {unit}"
