#!/usr/bin/env python3
"""Solve a free-format MPS model written by the mechlab exporter.

Parses the exporter's MPS subset (N/L/G/E rows, COLUMNS with optional
'INTORG'/'INTEND' markers, RHS, LO/UP bounds), assembles sparse matrices,
and dispatches to scipy.optimize.milp (HiGHS).  Writes `name value` lines
for every structural variable to the output file.

Exit codes: 0 optimal, 2 infeasible/unbounded, 1 anything else.
"""

import argparse
import sys

import numpy as np
from scipy import sparse
from scipy.optimize import milp, LinearConstraint, Bounds


def parse_mps(path):
    section = None
    row_sense = {}
    row_order = []
    obj_row = None
    cols = {}          # name -> list[(row, coeff)]
    col_order = []
    integral = set()
    in_int = False
    rhs = {}
    lo = {}
    hi = {}

    with open(path) as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("*"):
                continue
            if not line[0].isspace():
                word = line.split()[0]
                if word in ("NAME", "ENDATA"):
                    section = None
                else:
                    section = word
                continue
            tok = line.split()
            if section == "ROWS":
                sense, name = tok[0], tok[1]
                if sense == "N":
                    obj_row = name
                else:
                    row_sense[name] = sense
                    row_order.append(name)
            elif section == "COLUMNS":
                if len(tok) >= 3 and tok[1] == "'MARKER'":
                    in_int = tok[2] == "'INTORG'"
                    continue
                name = tok[0]
                if name not in cols:
                    cols[name] = []
                    col_order.append(name)
                    if in_int:
                        integral.add(name)
                for i in range(1, len(tok), 2):
                    cols[name].append((tok[i], float(tok[i + 1])))
            elif section == "RHS":
                for i in range(1, len(tok), 2):
                    rhs[tok[i]] = float(tok[i + 1])
            elif section == "BOUNDS":
                kind, _, name, val = tok[0], tok[1], tok[2], float(tok[3])
                if kind == "LO":
                    lo[name] = val
                elif kind == "UP":
                    hi[name] = val
                else:
                    raise ValueError(f"unsupported bound type {kind}")
            elif section == "RANGES":
                raise ValueError("RANGES not supported")

    nrow = len(row_order)
    ncol = len(col_order)
    row_idx = {r: i for i, r in enumerate(row_order)}
    col_idx = {c: i for i, c in enumerate(col_order)}

    c = np.zeros(ncol)
    data, ri, ci = [], [], []
    for name, entries in cols.items():
        j = col_idx[name]
        for row, coeff in entries:
            if row == obj_row:
                c[j] += coeff
            else:
                data.append(coeff)
                ri.append(row_idx[row])
                ci.append(j)
    A = sparse.csr_matrix((data, (ri, ci)), shape=(nrow, ncol))

    bl = np.full(nrow, -np.inf)
    bu = np.full(nrow, np.inf)
    for name, i in row_idx.items():
        b = rhs.get(name, 0.0)
        s = row_sense[name]
        if s in ("G", "E"):
            bl[i] = b
        if s in ("L", "E"):
            bu[i] = b

    xl = np.array([lo.get(n, 0.0) for n in col_order])
    xu = np.array([hi.get(n, np.inf) for n in col_order])
    is_int = np.array([1 if n in integral else 0 for n in col_order])
    return col_order, c, A, bl, bu, xl, xu, is_int


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("mps")
    ap.add_argument("output")
    ap.add_argument("--mip-gap", type=float, default=1e-9)
    ap.add_argument("--time-limit", type=float, default=None)
    args = ap.parse_args()

    names, c, A, bl, bu, xl, xu, is_int = parse_mps(args.mps)
    options = {"mip_rel_gap": args.mip_gap}
    if args.time_limit is not None:
        options["time_limit"] = args.time_limit
    res = milp(
        c,
        integrality=is_int,
        bounds=Bounds(xl, xu),
        constraints=LinearConstraint(A, bl, bu),
        options=options,
    )
    # status: 0 optimal, 2 infeasible, 3 unbounded
    if res.status == 0:
        with open(args.output, "w") as fh:
            for name, v in zip(names, res.x):
                fh.write(f"{name} {v:.15g}\n")
        print(f"optimal objective {res.fun:.12g}")
        return 0
    print(f"not optimal: status {res.status} ({res.message})", file=sys.stderr)
    if res.status in (2, 3):
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())
