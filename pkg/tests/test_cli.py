import json
import math
import re

import numpy as np
import pytest

from featalloc.cli import main
from featalloc.io import read_chain, read_meta, save_matrix
from featalloc.similarity import DECAY_KINDS


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def zfile(tmp_path):
    p = tmp_path / "z.csv"
    p.write_text("1,0\n1,1\n0,1\n")
    return p


@pytest.fixture
def dfile(tmp_path):
    p = tmp_path / "d.csv"
    save_matrix(p, np.abs(np.subtract.outer(np.arange(3), np.arange(3))) / 3)
    return p


class TestLogpmf:
    def test_ibp(self, capsys, zfile):
        code, out, _ = run(capsys, "logpmf", "--z", zfile, "--alpha", 1.5)
        assert code == 0
        assert math.isfinite(float(out.strip()))

    def test_aibd(self, capsys, zfile, dfile):
        code, out, _ = run(capsys, "logpmf", "--prior", "aibd", "--z", zfile, "--alpha", 1.5,
                           "--distances", dfile, "--temp", 2, "--perm", "3,1,2")
        assert code == 0 and float(out) < 0

    def test_missing_z(self, capsys):
        code, _, err = run(capsys, "logpmf", "--alpha", 1)
        assert code == 1 and "--z" in err

    def test_aibd_needs_distances(self, capsys, zfile):
        assert run(capsys, "logpmf", "--prior", "aibd", "--z", zfile, "--alpha", 1)[0] == 1

    def test_zero_denominator(self, capsys, tmp_path):
        z = tmp_path / "z.csv"
        z.write_text("1\n1\n")
        d = tmp_path / "d.csv"
        d.write_text("0,5\n5,0\n")
        code, _, err = run(capsys, "logpmf", "--prior", "aibd", "--z", z, "--alpha", 1,
                           "--distances", d, "--similarity", "window", "--temp", 1)
        assert code == 2 and "customer 2" in err

    def test_missing_file(self, capsys, tmp_path):
        assert run(capsys, "logpmf", "--z", tmp_path / "nope.csv", "--alpha", 1)[0] == 2


class TestEnumerate:
    def test_two_customers(self, capsys):
        code, out, _ = run(capsys, "enumerate", "--n", 2, "--max-k", 1, "--alpha", 1.5)
        assert code == 0
        lines = out.strip().splitlines()
        assert len(lines) == 5 and lines[-1].startswith("mass")
        k1 = re.search(r"K=1:([^,]+),([^,]+),([^\t]+)", lines[-1])
        ibp, aibd, poisson = (float(v) for v in k1.groups())
        rate = 1.5 * 1.5
        assert poisson == pytest.approx(rate * math.exp(-rate), abs=1e-12)
        assert ibp == pytest.approx(poisson, abs=1e-10)
        assert aibd == pytest.approx(poisson, abs=1e-10)

    def test_one_customer(self, capsys):
        _, out, _ = run(capsys, "enumerate", "--n", 1, "--max-k", 3, "--alpha", 0.7)
        mass = out.strip().splitlines()[-1]
        for k, (a, b, c) in enumerate(re.findall(r"K=\d+:([^,]+),([^,]+),([^\t]+)", mass)):
            p = math.exp(-0.7) * 0.7**k / math.factorial(k)
            assert float(a) == pytest.approx(p, abs=1e-12)
            assert float(b) == pytest.approx(p, abs=1e-12)


class TestSamplePrior:
    def test_deterministic(self, capsys, tmp_path, dfile):
        args = ["sample-prior", "--prior", "aibd", "--distances", dfile, "--alpha", 2, "--samples", 20, "--seed", 5]
        run(capsys, *args, "--out", tmp_path / "a.jsonl")
        run(capsys, *args, "--out", tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_text() == (tmp_path / "b.jsonl").read_text()
        chain = read_chain(tmp_path / "a.jsonl")
        assert len(chain) == 20 and all(math.isfinite(s.log_prior) for s in chain)

    def test_stdout(self, capsys):
        code, out, _ = run(capsys, "sample-prior", "--n", 4, "--samples", 3, "--seed", 1)
        assert code == 0 and len(out.strip().splitlines()) == 3
        assert len(json.loads(out.splitlines()[0])["rho"]) == 4

    def test_bad_samples(self, capsys):
        assert run(capsys, "sample-prior", "--n", 4, "--samples", 0)[0] == 2


class TestFitDiagnose:
    @pytest.fixture
    def data(self, tmp_path, rng):
        p = tmp_path / "x.csv"
        z = np.array([[1, 0], [1, 0], [0, 1], [0, 1], [1, 1]])
        save_matrix(p, z @ rng.normal(size=(2, 3)) + 0.3 * rng.normal(size=(5, 3)))
        return p

    def test_fit_then_diagnose(self, capsys, tmp_path, data):
        out = tmp_path / "run.jsonl"
        code, _, _ = run(capsys, "fit", "--data", data, "--samples", 40, "--burnin", 10, "--seed", 3, "--out", out)
        assert code == 0
        chain = read_chain(out)
        assert len(chain) == 30
        meta = read_meta(out)
        assert meta["seed"] == 3 and "config" in meta
        for report in ("sharing", "correlation", "histogram", "dic"):
            code, text, _ = run(capsys, "diagnose", "--chain", out, "--report", report)
            assert code == 0 and text.strip()
        code, text, _ = run(capsys, "diagnose", "--chain", out, "--report", "dic", "--data", data)
        assert code == 0
        recorded = run(capsys, "diagnose", "--chain", out, "--report", "dic")[1]
        assert float(text.split()[-1]) == pytest.approx(float(recorded.split()[-1]), rel=1e-9)

    def test_accuracy_needs_fixed_alpha(self, capsys, tmp_path, data):
        out = tmp_path / "run.jsonl"
        run(capsys, "fit", "--data", data, "--samples", 10, "--seed", 1, "--out", out)
        assert run(capsys, "diagnose", "--chain", out, "--report", "accuracy")[0] == 2
        assert run(capsys, "diagnose", "--chain", out, "--report", "accuracy", "--alpha", 1)[0] == 0

    def test_same_seed_same_chain(self, capsys, tmp_path, data):
        for name in ("a", "b"):
            run(capsys, "fit", "--data", data, "--prior", "ibp", "--samples", 15, "--seed", 8,
                "--out", tmp_path / f"{name}.jsonl")
        assert (tmp_path / "a.jsonl").read_text() == (tmp_path / "b.jsonl").read_text()

    def test_multiple_chains(self, capsys, tmp_path, data, dfile):
        d = tmp_path / "d5.csv"
        save_matrix(d, np.abs(np.subtract.outer(np.arange(5), np.arange(5))) / 5.0)
        code, _, _ = run(capsys, "fit", "--data", data, "--prior", "aibd", "--distances", d, "--temp", "gamma:1,1",
                         "--samples", 10, "--chains", 2, "--seed", 4, "--out", tmp_path / "run.jsonl")
        assert code == 0
        a, b = (read_chain(tmp_path / f"run.chain{c}.jsonl") for c in (1, 2))
        assert len(a) == len(b) == 10 and a != b

    def test_config_file(self, capsys, tmp_path, data):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"data = {data}\nsamples = 12\nseed = 2\n")
        code, _, _ = run(capsys, "fit", "--config", cfg, "--samples", 6, "--out", tmp_path / "run.jsonl")
        assert code == 0 and len(read_chain(tmp_path / "run.jsonl")) == 6

    def test_unknown_config_key(self, capsys, tmp_path, data):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("sampels = 12\n")
        code, _, err = run(capsys, "fit", "--config", cfg, "--data", data, "--out", tmp_path / "o.jsonl")
        assert code == 2 and "valid keys" in err

    def test_missing_data(self, capsys, tmp_path):
        assert run(capsys, "fit", "--out", tmp_path / "o.jsonl")[0] in (1, 2)


class TestMisc:
    def test_version(self, capsys):
        code, out, _ = run(capsys, "--version")
        assert code == 0 and re.match(r"featalloc \d+\.\d+\.\d+ \(build [0-9a-f]{12}\)", out)

    def test_no_command(self, capsys):
        assert run(capsys)[0] == 1

    @pytest.mark.parametrize("kind", DECAY_KINDS)
    def test_validate_similarity(self, capsys, kind):
        code, out, _ = run(capsys, "validate-similarity", "--similarity", kind)
        assert code == 0 and "monotone,True" in out
