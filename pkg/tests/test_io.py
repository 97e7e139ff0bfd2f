import csv
import json
import math
import struct

import numpy as np
import pytest

from moderate.io import (file_sha256, loglog_svg, read_archive, read_field, read_trajectory, write_archive,
                         write_csv, write_field, write_field_csv, write_json, write_trajectory)
from moderate.kernels import Kernel
from moderate.particles import ParticleEnsemble
from moderate.pde import SolverConfig, solve_fp_torus
from moderate.spectral import GridField


def test_field_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    for f in (GridField(rng.normal(size=64), 1), GridField(rng.normal(size=(16, 16)), 2, 8.0),
              GridField(rng.normal(size=(2, 16, 16)), 2)):
        p = tmp_path / "f.bin"
        write_field(p, f, t=0.25)
        g = read_field(p)
        assert np.array_equal(f.values, g.values) and g.dim == f.dim and g.length == f.length
        assert read_field.last_time == 0.25
        assert p.stat().st_size == struct.calcsize("<4sIIIdd") + 8 * f.values.size


def test_field_rejects_foreign_and_truncated_files(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"XXXX" + bytes(64))
    with pytest.raises(ValueError, match="not a field"):
        read_field(p)
    write_field(p, GridField(np.ones(32), 1))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ValueError, match="expected 32"):
        read_field(p)


def test_field_csv_export(tmp_path):
    f = GridField.from_function(lambda x, y: np.stack([x + 10 * y, -x]), 4, 2, 2.0)
    rows = list(csv.DictReader(open(write_field_csv(tmp_path / "f.csv", f))))
    assert len(rows) == 16 and list(rows[0]) == ["x1", "x2", "v1", "v2"]
    for r in rows:
        x, y = float(r["x1"]), float(r["x2"])
        assert float(r["v1"]) == x + 10 * y and float(r["v2"]) == -x
    s = list(csv.DictReader(open(write_field_csv(tmp_path / "g.csv", GridField(np.arange(8.0), 1)))))
    assert [float(r["value"]) for r in s] == list(range(8)) and float(s[1]["x1"]) == 0.125
    with pytest.raises(ValueError, match="limited"):
        write_field_csv(tmp_path / "h.csv", GridField(np.zeros((512, 512)), 2))


def test_trajectory_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    ens = ParticleEnsemble(rng.uniform(size=(50, 2)), t=0.3, seed=7, step=12)
    inc = rng.normal(size=(4, 50, 2))
    p = tmp_path / "t.bin"
    write_trajectory(p, ens, inc)
    e2, i2 = read_trajectory(p)
    assert np.array_equal(e2.positions, ens.positions) and np.array_equal(i2, inc)
    assert (e2.t, e2.seed, e2.step) == (0.3, 7, 12)
    write_trajectory(p, ens)
    assert read_trajectory(p)[1] is None


def test_archive_round_trip(tmp_path):
    p0 = GridField.from_function(lambda x: 1 + 0.5 * np.cos(2 * np.pi * x), 64)
    sol = solve_fp_torus(p0, Kernel.sine_series({1: -2.0}), 0.01, SolverConfig(dt=1e-3, store=6))
    files = write_archive(tmp_path / "arch", sol)
    assert len(files) == 7 and files[-1].name == "p_meta.json"
    back = read_archive(tmp_path / "arch")
    assert np.array_equal(back.times, sol.times)
    assert all(np.array_equal(a.values, b.values) for a, b in zip(back.fields, sol.fields))
    assert back.solver_meta["scheme"] == "exp-midpoint"


def test_json_handles_numpy_and_non_finite(tmp_path):
    p = write_json(tmp_path / "x.json", {"a": np.float64(1.5), "b": np.arange(3), "c": math.inf,
                                         "d": np.bool_(True), 3: (np.int64(2),)})
    assert json.loads(p.read_text()) == {"a": 1.5, "b": [0, 1, 2], "c": "inf", "d": True, "3": [2]}


def test_csv_and_hash(tmp_path):
    rows = [{"N": 256, "err": repr(0.1)}, {"N": 512, "err": repr(0.07)}]
    p = write_csv(tmp_path / "r.csv", rows)
    with open(p) as fh:
        assert list(csv.DictReader(fh)) == [{"N": "256", "err": "0.1"}, {"N": "512", "err": "0.07"}]
    q = write_csv(tmp_path / "s.csv", rows)
    assert file_sha256(p) == file_sha256(q)
    assert write_csv(tmp_path / "e.csv", [], ["a", "b"]).read_text() == "a,b\n"


def test_svg_annotations(tmp_path):
    N = [256, 512, 1024, 2048]
    series = {"L^2": {"N": N, "err": [0.1, 0.08, 0.06, 0.045], "slope": -0.38, "intercept": 0.0},
              "B^-0.75_2,2": {"N": N, "err": [0.03, 0.024, 0.018, 0.013], "slope": -0.4, "intercept": -1.0}}
    text = loglog_svg(tmp_path / "p.svg", series, rho=0.09, title="verdict: consistent").read_text()
    assert text.startswith("<svg") and text.rstrip().endswith("</svg>")
    assert "L^2: fitted slope -0.380" in text and "B^-0.75_2,2: fitted slope -0.400" in text
    assert "reference slope -rho = -0.090" in text and "verdict: consistent" in text
    assert text.count("<circle") == 8
    bare = loglog_svg(tmp_path / "q.svg", {"L^2": series["L^2"]}).read_text()
    assert "reference slope" not in bare
