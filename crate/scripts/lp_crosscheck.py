"""Solve an exported amrplan LP file with SciPy's HiGHS MILP backend.

Usage: python3 scripts/lp_crosscheck.py out/model.lp

Prints the HiGHS status and objective so it can be compared with the
objective in summary.json from `amrplan plan`. The parser only handles the
subset of the LP format that amrplan writes.
"""

import re
import sys

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

SECTIONS = ("Minimize", "Subject To", "Bounds", "Binaries", "End")
TERM = re.compile(r"([+-])\s*([0-9.eE+-]+)\s+(\S+)")


def statements(text):
    out = []
    for raw in text.splitlines():
        if raw.startswith("\\"):
            continue
        if raw.startswith("   ") and out:
            out[-1] += " " + raw.strip()
        else:
            out.append(raw.strip())
    return out


def parse_bound(x):
    if x == "+inf":
        return np.inf
    if x == "-inf":
        return -np.inf
    return float(x)


def read_lp(path):
    with open(path) as f:
        lines = statements(f.read())
    names, bounds, binaries = [], {}, set()
    objective, rows = {}, []

    def var(name):
        if name not in bounds:
            bounds[name] = (0.0, np.inf)
            names.append(name)
        return name

    def terms(body):
        out = {}
        for sign, coef, name in TERM.findall(body):
            value = float(coef) if sign == "+" else -float(coef)
            out[var(name)] = out.get(name, 0.0) + value
        return out

    section = None
    for line in lines:
        if line in SECTIONS:
            section = line
        elif section == "Minimize":
            objective = terms(line.split(":", 1)[1])
        elif section == "Subject To":
            body = line.split(":", 1)[1]
            m = re.match(r"(.*)\s(<=|>=|=)\s(\S+)$", body)
            rows.append((terms(m.group(1)), m.group(2), float(m.group(3))))
        elif section == "Bounds":
            p = line.split()
            if len(p) == 5:
                bounds[var(p[2])] = (parse_bound(p[0]), parse_bound(p[4]))
            elif p[1] == "free":
                bounds[var(p[0])] = (-np.inf, np.inf)
            else:
                bounds[var(p[0])] = (float(p[2]), float(p[2]))
        elif section == "Binaries":
            binaries.add(line)
    return names, bounds, binaries, objective, rows


def main(path):
    names, bounds, binaries, objective, rows = read_lp(path)
    col = {n: j for j, n in enumerate(names)}
    c = np.zeros(len(names))
    for name, value in objective.items():
        c[col[name]] = value
    a = np.zeros((len(rows), len(names)))
    lo, hi = [], []
    for i, (terms, sense, rhs) in enumerate(rows):
        for name, value in terms.items():
            a[i, col[name]] = value
        lo.append(rhs if sense in (">=", "=") else -np.inf)
        hi.append(rhs if sense in ("<=", "=") else np.inf)
    res = milp(
        c,
        constraints=LinearConstraint(a, lo, hi) if rows else None,
        integrality=np.array([1 if n in binaries else 0 for n in names]),
        bounds=Bounds([bounds[n][0] for n in names], [bounds[n][1] for n in names]),
        options={"mip_rel_gap": 1e-9},
    )
    print(f"status {res.status}: {res.message}")
    if res.x is not None:
        print(f"objective {res.fun!r}")


if __name__ == "__main__":
    main(sys.argv[1])
