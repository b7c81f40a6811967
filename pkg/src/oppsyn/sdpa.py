"""Sparse SDPA file exchange: problem export, re-import, solution import.

The exported problem is the solver-basis conic form: free variables y, one
PSD block per moment/localizing matrix, equality rows encoded as opposing
inequality pairs inside the diagonal block (folded back to equalities on
import).
"""

from __future__ import annotations

import re

import numpy as np
import scipy.sparse as sp

from .sdp import BlockSpec, ConicProblem, GroupSpec


class ParseError(ValueError):
    """Malformed SDPA file; carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def export_sdpa(cp: ConicProblem, path, comment: str | None = None) -> None:
    """Write the conic problem as a sparse SDPA ``.dat-s`` file.

    The raw (untransformed) block data is emitted: it is mathematically
    equivalent to the internally conditioned form and stays sparse at high
    degrees.  Layout: min c'x with X = sum_i x_i F_i - F0 PSD; the PSD
    blocks come first, then one diagonal block holding the equality pairs
    (a'x - b >= 0 and b - a'x >= 0 adjacent).
    """
    if any(g.span is not None for g in cp.groups):
        raise ValueError("cannot export a span-reduced problem in raw coordinates")
    consts = [blk.const for blk in cp.blocks]
    n_eq = cp.n_eq
    diag_size = 2 * n_eq
    sizes = [blk.raw_side or blk.side for blk in cp.blocks]
    a_csc = cp.a_mat.tocsc()

    with open(path, "w") as fh:
        fh.write('"exported by oppsyn: moment truncation in raw power basis"\n')
        if comment:
            fh.write(f'"{comment}"\n')
        fh.write(f"{cp.nvar} = mDIM\n")
        nblocks = len(sizes) + (1 if diag_size else 0)
        fh.write(f"{nblocks} = nBLOCK\n")
        bsizes = [str(s) for s in sizes] + ([f"-{diag_size}"] if diag_size else [])
        fh.write("(" + ", ".join(bsizes) + ") = bLOCKsTRUCT\n")
        fh.write("{" + ", ".join(f"{v:.17g}" for v in cp.c_vec) + "}\n")

        diag_blk = len(sizes) + 1

        def entry(mat_no: int, blk_no: int, i: int, j: int, v: float):
            if v != 0.0:
                fh.write(f"{mat_no} {blk_no} {i} {j} {v:.17g}\n")

        # F0: minus the constant parts; diagonal block holds +-b
        for bi, q in enumerate(consts):
            if q is None:
                continue
            for i in range(q.shape[0]):
                for j in range(i, q.shape[1]):
                    entry(0, bi + 1, i + 1, j + 1, -q[i, j])
        for r in range(n_eq):
            entry(0, diag_blk, 2 * r + 1, 2 * r + 1, cp.b_vec[r])
            entry(0, diag_blk, 2 * r + 2, 2 * r + 2, -cp.b_vec[r])
        # F_k: raw upper-triangle triplets plus the equality rows
        for bi, blk in enumerate(cp.blocks):
            sl = cp.group_slice(blk.group)
            mask = blk.rows <= blk.cols
            order = np.lexsort((blk.cols[mask], blk.rows[mask], blk.locs[mask]))
            rows, cols = blk.rows[mask][order], blk.cols[mask][order]
            locs, coefs = blk.locs[mask][order], blk.coefs[mask][order]
            for loc, i, j, v in zip(locs, rows, cols, coefs):
                fh.write(f"{sl.start + loc + 1} {bi + 1} {i + 1} {j + 1} {v:.17g}\n")
        coo = a_csc.tocoo()
        order = np.lexsort((coo.row, coo.col))
        for idx in order:
            r, k, v = coo.row[idx], coo.col[idx], coo.data[idx]
            fh.write(f"{k + 1} {diag_blk} {2 * r + 1} {2 * r + 1} {v:.17g}\n")
            fh.write(f"{k + 1} {diag_blk} {2 * r + 2} {2 * r + 2} {-v:.17g}\n")


def _parse_vector(text: str) -> list[float]:
    cleaned = text.split("=")[0].strip().strip("{}()[]").replace(",", " ")
    return [float(x) for x in cleaned.split()] if cleaned else []


def import_sdpa(path) -> ConicProblem:
    """Read a sparse SDPA file back into conic form.

    Adjacent opposing diagonal pairs are folded back into equality rows, so
    a file produced by :func:`export_sdpa` round-trips to an equivalent
    problem.
    """
    lines = open(path).read().splitlines()
    pos = 0

    def next_data_line():
        nonlocal pos
        while pos < len(lines):
            raw = lines[pos]
            pos += 1
            stripped = raw.strip()
            if not stripped or stripped.startswith(('"', "*")):
                continue
            return stripped, pos
        raise ParseError("unexpected end of file", len(lines))

    def leading_int(text: str, line_no: int) -> int:
        m = re.match(r"^\s*(-?[0-9]+)", text)
        if not m:
            raise ParseError(f"expected integer, got {text!r}", line_no)
        return int(m.group(1))

    text, ln = next_data_line()
    mdim = leading_int(text, ln)
    if mdim <= 0:
        raise ParseError("mDIM must be positive", ln)
    text, ln = next_data_line()
    nblock = leading_int(text, ln)
    if nblock <= 0:
        raise ParseError("nBLOCK must be positive", ln)
    text, ln = next_data_line()
    sizes = [int(round(v)) for v in _parse_vector(text)]
    if len(sizes) != nblock:
        raise ParseError(f"expected {nblock} block sizes, got {len(sizes)}", ln)
    text, ln = next_data_line()
    c_vec = np.asarray(_parse_vector(text))
    if len(c_vec) != mdim:
        raise ParseError(f"expected {mdim} objective entries, got {len(c_vec)}", ln)

    diag_sizes = {k: -s for k, s in enumerate(sizes) if s < 0}
    f0: dict[int, np.ndarray] = {}
    # per-block triplet accumulators: (rows, cols, locs, coefs)
    data: dict[int, tuple[list, list, list, list]] = {
        k: ([], [], [], []) for k in range(nblock)
    }

    while pos < len(lines):
        raw = lines[pos]
        pos += 1
        stripped = raw.strip()
        if not stripped or stripped.startswith(('"', "*")):
            continue
        parts = stripped.replace(",", " ").split()
        if len(parts) != 5:
            raise ParseError(f"expected 5 fields, got {len(parts)}", pos)
        try:
            mat_no, blk_no, i, j = (int(x) for x in parts[:4])
            val = float(parts[4])
        except ValueError as exc:
            raise ParseError(str(exc), pos) from None
        if not (0 <= mat_no <= mdim):
            raise ParseError(f"matrix index {mat_no} out of range", pos)
        if not (1 <= blk_no <= nblock):
            raise ParseError(f"block index {blk_no} out of range", pos)
        size = abs(sizes[blk_no - 1])
        if not (1 <= i <= size and 1 <= j <= size):
            raise ParseError(f"entry ({i},{j}) outside block of size {size}", pos)
        if blk_no - 1 in diag_sizes and i != j:
            raise ParseError("off-diagonal entry in diagonal block", pos)
        if mat_no == 0:
            blk = f0.setdefault(blk_no - 1, np.zeros((size, size)))
            blk[i - 1, j - 1] = val
            blk[j - 1, i - 1] = val
        else:
            rows, cols, locs, coefs = data[blk_no - 1]
            rows.append(i - 1); cols.append(j - 1)
            locs.append(mat_no - 1); coefs.append(val)
            if i != j:
                rows.append(j - 1); cols.append(i - 1)
                locs.append(mat_no - 1); coefs.append(val)

    # one free variable group; each PSD block its own BlockSpec
    group = GroupSpec(("sdpa",), "free", 0,
                      tuple((k,) for k in range(mdim)),
                      {(k,): k for k in range(mdim)})
    blocks: list[BlockSpec] = []
    for k, size in enumerate(sizes):
        if size <= 0:
            continue
        rows, cols, locs, coefs = data[k]
        q = f0.get(k)
        blocks.append(BlockSpec(
            label=f"sdpa:{k}", group=0, side=size,
            rows=np.asarray(rows, dtype=np.int32),
            cols=np.asarray(cols, dtype=np.int32),
            locs=np.asarray(locs, dtype=np.int32),
            coefs=np.asarray(coefs),
            const=(-q if q is not None and np.any(q) else None),
        ))

    # diagonal blocks: fold adjacent opposing rows into equalities
    eq_rows, eq_rhs = [], []
    extra_diag = []
    for k, dsize in diag_sizes.items():
        rows, cols, locs, coefs = data[k]
        per_idx: dict[int, dict[int, float]] = {}
        for r, loc, v in zip(rows, locs, coefs):
            per_idx.setdefault(r, {})[loc] = v
        q = f0.get(k)
        rows_data = []
        for idx in range(dsize):
            coeffs = sp.dok_matrix((1, mdim))
            for loc, v in per_idx.get(idx, {}).items():
                coeffs[0, loc] = v
            rows_data.append((coeffs.tocsr(), q[idx, idx] if q is not None else 0.0))
        idx = 0
        while idx < dsize:
            if idx + 1 < dsize:
                a1, b1 = rows_data[idx]
                a2, b2 = rows_data[idx + 1]
                if abs(b1 + b2) < 1e-12 and (a1 + a2).count_nonzero() == 0:
                    eq_rows.append(a1)
                    eq_rhs.append(b1)
                    idx += 2
                    continue
            extra_diag.append(rows_data[idx])
            idx += 1
    for coeffs, rhs in extra_diag:
        nz = coeffs.indices
        vals = coeffs.data
        if not len(nz):
            nz = np.array([0])
            vals = np.array([0.0])
        blocks.append(BlockSpec(
            label="sdpa:ineq", group=0, side=1,
            rows=np.zeros(len(nz), dtype=np.int32),
            cols=np.zeros(len(nz), dtype=np.int32),
            locs=np.asarray(nz, dtype=np.int32),
            coefs=np.asarray(vals, dtype=float),
            const=np.array([[-rhs]]),
        ))

    a_mat = sp.vstack(eq_rows, format="csr") if eq_rows else sp.csr_matrix((0, mdim))
    return ConicProblem(
        groups=[group], blocks=blocks, a_mat=a_mat,
        b_vec=np.asarray(eq_rhs), c_vec=c_vec,
        row_labels=[("sdpa", k) for k in range(len(eq_rhs))],
        beta=None, relaxation=None, init_y=np.zeros(mdim),
    )


def import_solution(path) -> dict:
    """Parse an SDPA-style result file: phase value and the xVec variables."""
    text = open(path).read()
    phase = None
    m = re.search(r"phase\.value\s*[:=]\s*(\S+)", text)
    if m:
        phase = m.group(1)
    m = re.search(r"xVec\s*=\s*\{(.*?)\}", text, re.DOTALL)
    if m is None:
        raise ParseError("no xVec block found", 1)
    x = np.asarray(_parse_vector("{" + m.group(1) + "}"))
    m_obj = re.search(r"objValPrimal\s*[:=]\s*(\S+)", text)
    status_map = {
        "pdOPT": "optimal", "pFEAS": "maxiter", "dFEAS": "maxiter",
        "pdFEAS": "maxiter", "pINF_dFEAS": "infeasible", "pUNBD": "unbounded",
        "pFEAS_dINF": "unbounded", "dUNBD": "infeasible", "noINFO": "numerical",
    }
    return {
        "status": status_map.get(phase, "numerical" if phase else "optimal"),
        "phase": phase,
        "x": x,
        "objective": float(m_obj.group(1)) if m_obj else None,
    }


def validate_sdpa(path) -> dict:
    """Structural validation: parse fully and report the problem shape."""
    cp = import_sdpa(path)
    return {
        "variables": cp.nvar,
        "equalities": cp.n_eq,
        "psd_blocks": len([b for b in cp.blocks if b.side > 1]),
        "blocks": len(cp.blocks),
        "max_side": max(b.side for b in cp.blocks) if cp.blocks else 0,
    }
