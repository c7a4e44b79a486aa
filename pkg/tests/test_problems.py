import json
import os

import numpy as np
import pytest
import scipy.sparse as sp

from nepsolve.core import Interval, backward_error
from nepsolve.newton import slp_solve
from nepsolve.core import Settings
from nepsolve.problems import (
    MatrixMarketError,
    gen_delay,
    gen_loaded_string,
    load_problem_manifest,
    read_matrix_market,
    write_matrix_market,
)


# -- delay --------------------------------------------------------------------


def test_delay_split_structure():
    op, _ = gen_delay(10, tau=0.25, b=-2.0)
    assert op.nterms == 3
    # one constant, one -lambda, one exp(-tau*lambda) term
    vals = sorted(abs(f(1.0)) for _, f in op.terms)
    assert vals == pytest.approx(sorted([1.0, 1.0, np.exp(-0.25)]))
    (A, fA), (I, fI), (B, fB) = op.terms
    assert fA(3.3) == 1.0
    assert fI(3.3) == -3.3
    assert fB(2.0) == pytest.approx(np.exp(-0.5))


def test_delay_tau_zero_is_linear():
    op, oracle = gen_delay(10, tau=0.0, b=0.0)
    mu = oracle.laplacian_eigenvalues()
    roots = oracle.roots()
    assert np.allclose(np.sort(roots.real), np.sort(mu), rtol=1e-14)


def test_delay_oracle_self_consistency():
    n = 30
    op, oracle = gen_delay(n, tau=0.001, b=-2.0)
    roots = oracle.nearest(1.0, 4)
    j = np.arange(1, n + 1)
    for lam in roots:
        # identify the Laplacian branch and use its eigenvector
        mu = oracle.laplacian_eigenvalues()
        k = int(np.argmin(np.abs(-lam + mu - 2 * np.exp(-0.001 * lam))))
        x = np.sin((k + 1) * np.pi * j / (n + 1)).astype(complex)
        eta = backward_error(op, lam, x / np.linalg.norm(x))
        assert eta <= 1e-10


def test_delay_small_solver_matches_oracle():
    op, oracle = gen_delay(10, tau=0.001, b=-2.0)
    roots = oracle.roots()
    sol = slp_solve(op, Settings(nev=3, tol=1e-10, target=1.0))
    assert sol.converged
    for lam in sol.eigenvalues:
        assert np.min(np.abs(roots - lam)) <= 1e-8 * abs(lam)


def test_delay_noncommuting_variant_has_no_oracle():
    op, oracle = gen_delay(8, commuting=False)
    assert oracle is None
    assert op.nterms == 3


# -- loaded string ------------------------------------------------------------------


def test_loaded_string_construction_invariants():
    op, oracle = gen_loaded_string(25, kappa=1.0, mass=1.0)
    A, B, C = (t[0].toarray() for t in op.terms)
    assert np.allclose(A, A.T)
    assert np.allclose(B, B.T)
    assert np.all(np.linalg.eigvalsh(A.real) > 0)
    assert np.all(np.linalg.eigvalsh(B.real) > 0)
    assert np.linalg.matrix_rank(C) == 1
    assert oracle.pole == 1.0


def test_loaded_string_nine_eigenvalues_in_interval():
    _, oracle = gen_loaded_string(60)
    inside = oracle.in_interval(4.0, 800.0)
    assert len(inside) == 9


def test_loaded_string_oracle_self_consistency():
    op, oracle = gen_loaded_string(40)
    lams = oracle.in_interval(4.0, 800.0)[:4]
    for lam in lams:
        T = op.assemble(complex(lam)).toarray()
        _, _, Vh = np.linalg.svd(T)
        x = Vh[-1].conj()
        assert backward_error(op, complex(lam), x) <= 1e-10


def test_loaded_string_pole_scales_with_parameters():
    op, oracle = gen_loaded_string(10, kappa=3.0, mass=2.0)
    assert oracle.pole == pytest.approx(1.5)
    f3 = op.terms[2][1]
    with pytest.raises(Exception):
        f3(1.5)  # pole of the rational coefficient


# -- matrix market --------------------------------------------------------------------


def test_mm_single_entry(tmp_path):
    p = tmp_path / "one.mtx"
    p.write_text("%%MatrixMarket matrix coordinate real general\n1 1 1\n1 1 5.0\n")
    A = read_matrix_market(p)
    assert A.shape == (1, 1)
    assert A[0, 0] == 5.0


def test_mm_symmetric_expansion(tmp_path):
    p = tmp_path / "sym.mtx"
    p.write_text(
        "%%MatrixMarket matrix coordinate real symmetric\n"
        "3 3 4\n1 1 2.0\n2 1 -1.0\n3 2 -1.0\n3 3 2.0\n"
    )
    A = read_matrix_market(p).toarray()
    assert np.allclose(A, A.T)
    assert A[0, 1] == -1.0 and A[1, 0] == -1.0


def test_mm_hermitian_expansion(tmp_path):
    p = tmp_path / "herm.mtx"
    p.write_text(
        "%%MatrixMarket matrix coordinate complex hermitian\n"
        "2 2 2\n1 1 1.0 0.0\n2 1 2.0 3.0\n"
    )
    A = read_matrix_market(p).toarray()
    assert A[1, 0] == 2.0 + 3.0j
    assert A[0, 1] == 2.0 - 3.0j


def test_mm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    A = sp.random(15, 15, density=0.2, random_state=3).astype(complex)
    A = A + 1j * sp.random(15, 15, density=0.1, random_state=4)
    p = tmp_path / "rt.mtx"
    write_matrix_market(p, A)
    B = read_matrix_market(p)
    assert np.allclose(A.toarray(), B.toarray(), atol=1e-15)


def test_mm_array_layout(tmp_path):
    p = tmp_path / "arr.mtx"
    p.write_text("%%MatrixMarket matrix array real general\n2 2\n1.0\n2.0\n3.0\n4.0\n")
    A = read_matrix_market(p).toarray()
    assert np.allclose(A, [[1.0, 3.0], [2.0, 4.0]])


def test_mm_parse_errors_report_line_numbers(tmp_path):
    p = tmp_path / "bad.mtx"
    p.write_text("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n9 1 1.0\n")
    with pytest.raises(MatrixMarketError) as exc:
        read_matrix_market(p)
    assert ":4:" in str(exc.value)

    p2 = tmp_path / "bad2.mtx"
    p2.write_text("%%NotMatrixMarket\n")
    with pytest.raises(MatrixMarketError):
        read_matrix_market(p2)

    p3 = tmp_path / "bad3.mtx"
    p3.write_text("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 x 1.0\n")
    with pytest.raises(MatrixMarketError) as exc3:
        read_matrix_market(p3)
    assert ":3:" in str(exc3.value)


# -- manifests ------------------------------------------------------------------------


def write_delay_manifest(tmp_path, n=8, tau=0.001, b=-2.0):
    op, _ = gen_delay(n, tau, b)
    names = []
    for i, (A, _) in enumerate(op.terms):
        name = f"m{i}.mtx"
        write_matrix_market(tmp_path / name, A)
        names.append(name)
    doc = {
        "name": "delay-desk",
        "matrices": names,
        "functions": [
            {"type": "rational", "num": [1.0]},
            {"type": "rational", "num": [-1.0, 0.0]},
            {"type": "exp", "alpha": -tau},
        ],
        "pattern": "subset",
        "settings": {
            "nev": 5,
            "tol": 1e-6,
            "target": [1.0, 0.0],
            "region": {"kind": "interval", "a": -100.0, "b": 50.0},
        },
    }
    path = tmp_path / "delay.json"
    path.write_text(json.dumps(doc))
    return op, path


def test_manifest_reproduces_generator(tmp_path):
    op_ref, path = write_delay_manifest(tmp_path)
    op, settings = load_problem_manifest(path)
    assert op.nterms == 3
    assert settings.nev == 5
    assert settings.tol == 1e-6
    assert settings.target == 1.0
    assert isinstance(settings.region, Interval)
    for lam in (0.0, 1.0, -3.3 + 0.1j):
        assert np.allclose(
            op.assemble(lam).toarray(), op_ref.assemble(lam).toarray(), atol=1e-12
        )


def test_manifest_missing_file(tmp_path):
    doc = {"matrices": ["nope.mtx"], "functions": [{"type": "exp"}]}
    path = tmp_path / "m.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(FileNotFoundError):
        load_problem_manifest(path)


def test_manifest_count_mismatch(tmp_path):
    write_matrix_market(tmp_path / "a.mtx", sp.identity(3, format="csr"))
    doc = {"matrices": ["a.mtx"], "functions": []}
    path = tmp_path / "m.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError):
        load_problem_manifest(path)


def test_manifest_dimension_mismatch(tmp_path):
    write_matrix_market(tmp_path / "a.mtx", sp.identity(3, format="csr"))
    write_matrix_market(tmp_path / "b.mtx", sp.identity(4, format="csr"))
    doc = {
        "matrices": ["a.mtx", "b.mtx"],
        "functions": [{"type": "exp"}, {"type": "exp"}],
    }
    path = tmp_path / "m.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError):
        load_problem_manifest(path)
