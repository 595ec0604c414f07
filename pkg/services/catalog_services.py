# services/catalog_services.py
"""Frozen benchmark documents referenced by name from run configs."""
import copy
from typing import Dict

from services.errors import InvalidInputError

B1_FAMILY = {
    "n": 2,
    "nu": 1,
    "alpha_bounds": [[1.0, 3.0], [2.0, 4.0]],
    "beta_bounds": [[1.0, 2.0]],
    "gain": {"g_lower": 0.8, "g_upper": 1.25, "g_star": 1.025},
}

B1_CONTROLLER = {"num": [5.0, 5.0], "den": [10.0, 1.0]}

B1_QFILTER = {"nu": 1, "a": [1.0], "tau": 1e-3}

# N1: f = th1 x1 x2 + th2 z, g = 1 + th3 x1^2, h = -z + x1 + dz1
N1_PLANT = {
    "nu": 2,
    "n": 3,
    "f": {
        "terms": [
            {"coeff": 0.24, "powers": {"x1": 1, "x2": 1}, "bounds": [0.16, 0.24]},
            {"coeff": 0.6, "powers": {"z1": 1}, "bounds": [0.4, 0.6]},
        ]
    },
    "g": {
        "terms": [
            {"coeff": 1.0},
            {"coeff": 0.2, "powers": {"x1": 2}, "bounds": [0.0, 0.2]},
        ],
        "clip": [0.5, 2.0],
    },
    "h": [
        {
            "terms": [
                {"coeff": -1.0, "powers": {"z1": 1}},
                {"coeff": 1.0, "powers": {"x1": 1}},
                {"coeff": 1.0, "powers": {"dz1": 1}},
            ]
        }
    ],
    "d": {"kind": "sinusoid", "amplitude": 0.5, "frequency": 2.0},
    "gain": {"g_lower": 0.5, "g_upper": 2.0, "g_star": 1.0},
}

N1_NOMINAL = {
    "f_n": {
        "terms": [
            {"coeff": 0.2, "powers": {"x1": 1, "x2": 1}},
            {"coeff": 0.5, "powers": {"z1": 1}},
        ]
    },
    "g_n": {"catalog": "constant", "params": {"value": 1.0}},
    "h_n": [
        {"terms": [{"coeff": -1.0, "powers": {"z1": 1}}, {"coeff": 1.0, "powers": {"x1": 1}}]}
    ],
}

# observer-based output feedback on the linearised nominal chain:
# K = [4, 4, 0.5] places (s+1)(s+2)^2, L = [14, 61, 129] places (s+5)^3
N1_CONTROLLER = {
    "A": [[-14.0, 1.0, 0.0], [-65.0, -4.0, 0.0], [-128.0, 0.0, -1.0]],
    "B": [-14.0, -61.0, -129.0],
    "C": [-4.0, -4.0, -0.5],
    "D": 0.0,
}

N1_ENVELOPE = {
    "U_x": [[-2.0, 2.0], [-2.0, 2.0]],
    "Z": [[-2.0, 2.0]],
    "M_d": 0.5,
    "eta_bounds": [[-3.0, 3.0], [-3.0, 3.0], [-3.0, 3.0]],
}

# a = [9, 6]: double fast root at -3 / tau when g = g*
N1_PARAMS = {
    "qspec": {"nu": 2, "a": [9.0, 6.0], "tau": 1e-3},
    "g_star": 1.0,
    "sat_x_levels": [[-2.5, 2.5], [-2.5, 2.5]],
}

BENCHMARKS: Dict[str, Dict[str, dict]] = {
    "B1": {
        "design-q": {"nu": 1, "a_tail": [], "gains": B1_FAMILY["gain"]},
        "analyze": {
            "family": B1_FAMILY,
            "controller": B1_CONTROLLER,
            "qfilter": B1_QFILTER,
            "tau_grid": [1e-1, 1e-2, 1e-3, 1e-4],
        },
        "poles": {
            "plant": {"alpha": [1.0, 4.0], "beta": [2.0], "g": 0.8, "provenance": "vertex"},
            "nominal": {"alpha": [2.0, 3.0], "beta": [1.5], "g": 1.025},
            "controller": B1_CONTROLLER,
            "qfilter": B1_QFILTER,
            "tau_seq": [1e-1, 1e-2, 1e-3, 1e-4],
        },
        "simulate": {
            "loop": {
                "plant": {"num": [1.6, 0.8], "den": [1.0, 4.0, 1.0]},
                "nominal": {"num": [1.5375, 1.025], "den": [2.0, 3.0, 1.0]},
                "controller": B1_CONTROLLER,
                "qfilter": {"nu": 1, "a": [1.0], "tau": 1e-2},
            },
            "r": {"kind": "step"},
            "d": {"kind": "sinusoid", "amplitude": 0.5, "frequency": 0.5},
            "t_end": 10.0,
            "dt": 5e-4,
        },
    },
    # eta0 starts the observer on x0; the DOB does not see x2(0) = -0.5, so it peaks
    "N1": {
        "simulate-nl": {
            "plant": N1_PLANT,
            "nominal": N1_NOMINAL,
            "controller": N1_CONTROLLER,
            "params": N1_PARAMS,
            "envelope": N1_ENVELOPE,
            "x0": [0.5, -0.5],
            "z0": [0.0],
            "eta0": [0.5, -0.5, 0.0],
            "t_end": 1.0,
            "dt": 5e-5,
        },
        "compare-transient": {
            "plant": N1_PLANT,
            "nominal": N1_NOMINAL,
            "controller": N1_CONTROLLER,
            "params": N1_PARAMS,
            "envelope": N1_ENVELOPE,
            "x0": [0.5, -0.5],
            "z0": [0.0],
            "eta0": [0.5, -0.5, 0.0],
            "t_end": 1.0,
            "tau_sweep": [1e-2, 3e-3, 1e-3, 3e-4],
        },
    },
}


def benchmark_defaults(name: str, command: str) -> dict:
    """Deep copy of a benchmark's document for one command."""
    if name not in BENCHMARKS:
        raise InvalidInputError(f"unknown benchmark '{name}' (known: {', '.join(sorted(BENCHMARKS))})")
    documents = BENCHMARKS[name]
    if command not in documents:
        raise InvalidInputError(f"benchmark '{name}' has no defaults for '{command}'")
    return copy.deepcopy(documents[command])
