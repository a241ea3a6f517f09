"""Shared builders for tests."""
import itertools

from tansurf.geometry import ConnectionField

MONOMIALS3 = ["1", "x1", "x2", "x3", "x1^2", "x1*x2", "x2*x3", "x3^2", "x1*x3", "x2^2"]


def poly_source(coeffs, monomials):
    return " + ".join(f"({c:.6f})*{m}" for c, m in zip(coeffs, monomials))


def random_poly_connection(rng, dim=3, density=0.4, scale=0.3, symmetric=False):
    """Sparse connection whose symbols are random degree-2 polynomials."""
    mons = [m for m in MONOMIALS3 if all(int(d) <= dim for d in m if d.isdigit())]
    entries = {}
    for l, a, b in itertools.product(range(1, dim + 1), repeat=3):
        if symmetric and b < a:
            continue
        if rng.random() < density:
            src = poly_source(scale * rng.standard_normal(len(mons)), mons)
            entries[(l, a, b)] = src
            if symmetric:
                entries[(l, b, a)] = src
    return ConnectionField.from_entries(dim, entries)


def random_poly_curve_sources(rng, dim=3, degree=4, scale=1.0):
    comps = []
    for _ in range(dim):
        c = scale * rng.standard_normal(degree + 1)
        comps.append(" + ".join(f"({v:.6f})*t^{k}" for k, v in enumerate(c)))
    return comps
