import csv
import json

import numpy as np
import pytest

from popkit.cli import cmd_diagnose, cmd_fit, cmd_simulate, main
from popkit.gibbs import PosteriorDraws
from popkit.io import (
    draws_header,
    parse_run_config,
    read_dataset_csv,
    read_draws_csv,
    read_key_values,
    write_dataset_csv,
    write_draws_csv,
)
from popkit.model import DataError
from popkit.pk_math import log_mean_raw
from popkit.simulate import TruthSpec, simulate_dataset

FAST = "iterations = 400\nburn_in = 200\nthin = 2\nseed = 5\n"


def _write(path, text):
    path.write_text(text)
    return path


@pytest.fixture
def sim_dir(tmp_path):
    truth = _write(tmp_path / "truth.cfg", "n_patients = 12\nseed = 3\nsigma2 = 0.01\n")
    out = tmp_path / "sim"
    assert cmd_simulate(truth, out) == 0
    return out


def test_simulate_reference(sim_dir):
    rows = list(csv.reader(open(sim_dir / "data.csv")))
    assert rows[0] == ["patient_id", "dose_mg", "time_hr", "conc"]
    assert len(rows) - 1 == 120
    truth = list(csv.DictReader(open(sim_dir / "truth.csv")))
    assert {r["parameter"] for r in truth} >= {"alpha1", "zeta", "sigma2", "theta3"}


def test_simulate_noise_free(tmp_path):
    cfg = _write(tmp_path / "t.cfg", "sigma2 = 0\nomega2 = 0.1, 0.1, 0.1\nseed = 4\n")
    assert cmd_simulate(cfg, tmp_path / "o") == 0
    data, _ = read_dataset_csv(tmp_path / "o" / "data.csv")
    theta = {}
    for r in csv.DictReader(open(tmp_path / "o" / "truth.csv")):
        theta[(r["parameter"], r["patient_id"])] = float(r["value"])
    zeta = theta[("zeta", "")]
    for p in data.patients:
        th = [theta[(f"theta{l}", p.patient_id)] for l in (1, 2, 3)]
        f = log_mean_raw(*th, zeta, p.dose, p.times)
        assert np.max(np.abs(p.log_conc - f)) < 1e-12


def test_simulate_deterministic(tmp_path):
    cfg = _write(tmp_path / "t.cfg", "seed = 8\n")
    cmd_simulate(cfg, tmp_path / "a")
    cmd_simulate(cfg, tmp_path / "b")
    for name in ("data.csv", "truth.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_simulate_bad_config(tmp_path):
    assert cmd_simulate(_write(tmp_path / "t.cfg", "cl = -1\n"), tmp_path / "o") == 2
    assert cmd_simulate(_write(tmp_path / "u.cfg", "bogus = 1\n"), tmp_path / "o") == 2
    assert cmd_simulate(_write(tmp_path / "v.cfg", "omega2 = 1, 2\n"), tmp_path / "o") == 2


def test_dataset_round_trip(tmp_path):
    data, _ = simulate_dataset(TruthSpec.reference(), 3, seed=1)
    write_dataset_csv(data, tmp_path / "a.csv")
    back, msgs = read_dataset_csv(tmp_path / "a.csv")
    assert msgs == []
    write_dataset_csv(back, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    for p, q in zip(data.patients, back.patients):
        assert np.array_equal(p.times, q.times)
        assert np.allclose(p.log_conc, q.log_conc, rtol=0, atol=1e-14)


def test_draws_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    d = PosteriorDraws(np.arange(1, 13), rng.normal(size=(12, 2, 3)), rng.normal(size=12),
                       rng.uniform(size=12), rng.normal(size=(12, 3)), rng.uniform(size=(12, 3)),
                       ["a,1", "b[2]"])
    write_draws_csv(d, tmp_path / "d.csv")
    back = read_draws_csv(tmp_path / "d.csv")
    assert back.patient_ids == ["a,1", "b[2]"]
    for name in ("iterations", "theta", "zeta", "sigma2", "alpha", "omega2"):
        assert np.array_equal(getattr(d, name), getattr(back, name)), name


def test_ingestion_drops_bad_rows(tmp_path):
    text = ("patient_id,dose_mg,time_hr,conc\n"
            "1,100,0,0.0\n1,100,1,2.5\n1,100,4,1.5\n"
            "2,100,1,3.0\n2,100,2,-1\n2,100,6,1.0\n")
    data, msgs = read_dataset_csv(_write(tmp_path / "d.csv", text))
    assert len(msgs) == 2 and ":2:" in msgs[0] and ":6:" in msgs[1]
    assert [p.n_obs for p in data.patients] == [2, 2]
    assert data.patients[0].log_conc[0] == np.log(2.5)


@pytest.mark.parametrize("text", [
    "id,dose,time,conc\n1,1,1,1\n",
    "patient_id,dose_mg,time_hr,conc\n1,100,1,abc\n",
    "patient_id,dose_mg,time_hr,conc\n1,100,1\n",
    "patient_id,dose_mg,time_hr,conc\n1,100,1,2\n1,200,2,1\n",
    "patient_id,dose_mg,time_hr,conc\n1,100,1,2\n1,100,1,1\n",
    "patient_id,dose_mg,time_hr,conc\n",
])
def test_ingestion_malformed(tmp_path, text):
    with pytest.raises(DataError):
        read_dataset_csv(_write(tmp_path / "d.csv", text))


def test_run_config_parsing(tmp_path):
    cfg = _write(tmp_path / "r.cfg", "# comment\niterations = 50\nburn_in=10\ntheta_kernel = mala\n"
                 "theta_step = 0.02\nrho2 = 4\nparallel = true\nadapt = false\nridge = off\n")
    config, priors = parse_run_config(read_key_values(cfg))
    assert config.n_iterations == 50 and config.burn_in == 10
    assert config.theta_kernel.kind == "mala" and config.theta_kernel.step == 0.02
    assert not config.theta_kernel.adapt_during_burnin
    assert config.parallel_patients and not config.ridge_move
    assert priors.zeta_prior_variance == 4.0
    for bad in ("iterations = x\n", "unknown = 1\n", "no equals sign\n", "parallel = maybe\n"):
        with pytest.raises(DataError):
            parse_run_config(read_key_values(_write(tmp_path / "b.cfg", bad)))


def test_fit_outputs_and_diagnose(sim_dir, tmp_path):
    cfg = _write(tmp_path / "run.cfg", FAST)
    out = tmp_path / "fit"
    assert cmd_fit(sim_dir / "data.csv", cfg, out) == 0
    rows = list(csv.reader(open(out / "draws.csv")))
    assert len(rows) - 1 == (400 - 200) // 2
    assert rows[0] == draws_header([str(i) for i in range(1, 13)])
    assert len(list(out.glob("bands_patient_*.csv"))) == 12
    band = list(csv.reader(open(out / "bands_patient_3.csv")))
    assert band[0] == ["time_hr", "q025", "q50", "q975"]
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["seed"] == 5 and "theta1" in manifest["acceptance"]
    assert manifest["config"]["n_iterations"] == 400
    summary = (out / "summary.csv").read_bytes()
    assert all(len(r) == 10 and r[6] for r in csv.reader(open(out / "summary.csv")))
    assert cmd_diagnose(out / "draws.csv", tmp_path / "diag") == 0
    assert (tmp_path / "diag" / "summary.csv").read_bytes() == summary
    assert ((tmp_path / "diag" / "bands_patient_3.csv").read_bytes()
            == (out / "bands_patient_3.csv").read_bytes())


def test_fit_byte_identical_and_parallel(sim_dir, tmp_path, monkeypatch):
    cfg = _write(tmp_path / "run.cfg", FAST)
    par = _write(tmp_path / "par.cfg", FAST + "parallel = true\n")
    monkeypatch.setenv("POPKIT_THREADS", "4")
    for name, c in (("a", cfg), ("b", cfg), ("c", par)):
        assert cmd_fit(sim_dir / "data.csv", c, tmp_path / name) == 0
    a = (tmp_path / "a" / "draws.csv").read_bytes()
    assert a == (tmp_path / "b" / "draws.csv").read_bytes()
    assert a == (tmp_path / "c" / "draws.csv").read_bytes()


def test_fit_t0_rows(tmp_path, capsys):
    cfg = _write(tmp_path / "run.cfg", FAST)
    data, _ = simulate_dataset(TruthSpec.reference(), 4, seed=2)
    write_dataset_csv(data, tmp_path / "d.csv")
    text = (tmp_path / "d.csv").read_text().splitlines()
    text.insert(1, "1,320.0,0,0.0")
    _write(tmp_path / "d0.csv", "\n".join(text) + "\n")
    assert cmd_fit(tmp_path / "d0.csv", cfg, tmp_path / "o") == 0
    assert "dropped row" in capsys.readouterr().err
    lonely = "patient_id,dose_mg,time_hr,conc\n1,100,0,1\n2,100,1,1\n2,100,2,0.5\n"
    assert cmd_fit(_write(tmp_path / "d1.csv", lonely), cfg, tmp_path / "o1") == 2


def test_fit_degenerate_exit_3(sim_dir, tmp_path, monkeypatch, capsys):
    import popkit.cli as cli
    from popkit.gibbs import DegenerateConditionalError

    def boom(*args, **kwargs):
        raise DegenerateConditionalError("iteration 7, block omega2: scale is 0")

    monkeypatch.setattr(cli, "run_chain", boom)
    cfg = _write(tmp_path / "r.cfg", FAST)
    assert cmd_fit(sim_dir / "data.csv", cfg, tmp_path / "o") == 3
    assert "iteration 7, block omega2" in capsys.readouterr().err


def test_diagnose_rejects_bad_files(tmp_path, sim_dir):
    cfg = _write(tmp_path / "run.cfg", FAST)
    cmd_fit(sim_dir / "data.csv", cfg, tmp_path / "fit")
    lines = (tmp_path / "fit" / "draws.csv").read_text().splitlines()
    _write(tmp_path / "short.csv", "\n".join(lines[:10]) + "\n")
    assert cmd_diagnose(tmp_path / "short.csv", tmp_path / "x") == 2
    _write(tmp_path / "bad.csv", "iteration,foo\n1,2\n")
    assert cmd_diagnose(tmp_path / "bad.csv", tmp_path / "x") == 2


def test_main_entry_point(sim_dir, tmp_path):
    cfg = _write(tmp_path / "run.cfg", FAST)
    assert main(["fit", str(sim_dir / "data.csv"), str(cfg), "-o", str(tmp_path / "m")]) == 0
    assert main(["diagnose", str(tmp_path / "m" / "draws.csv")]) == 0
    with pytest.raises(SystemExit):
        main(["nonsense"])
