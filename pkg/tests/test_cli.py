import numpy as np
import pytest

from chirpsep.cli import EXIT_CONFIG, EXIT_NO_SIGNAL, EXIT_OK, EXIT_PARTIAL, main
from chirpsep.io import example_path, read_estimates_csv, read_iq, write_iq
from chirpsep.signal_model import IQRecord


def test_gen_analyze_eval_round_trip(tmp_path, capsys):
    iq, est, heat = tmp_path / "x.bin", tmp_path / "est.csv", tmp_path / "heat.csv"
    assert main(["gen", "crossover", "-o", str(iq), "--snr", "0", "--seed", "2"]) == EXIT_OK
    assert read_iq(iq).sample_rate == 5e8
    assert main(["analyze", str(iq), "--scenario", "crossover", "-o", str(est)]) == EXIT_OK
    assert len(read_estimates_csv(est)) == 2
    capsys.readouterr()
    assert main(["eval", str(est), "crossover", "--heatmap", str(heat), "--hz"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "detected 2 of 2" in out and "Hz" in out
    assert heat.read_text().startswith("t,freq_true,freq_est,abs_residue")


def test_diagram_command(tmp_path):
    iq, d = tmp_path / "x.csv", tmp_path / "d.csv"
    assert main(["gen", str(example_path("crossover")), "-o", str(iq)]) == EXIT_OK
    assert main(["diagram", str(iq), "--eta", "2e7", "--snippets", "200",
                 "--band-center", "1.3e9", "-o", str(d)]) == EXIT_OK
    rows = d.read_text().splitlines()
    assert rows[0] == "snippet,t,lambda,freq_rad_s,magnitude" and len(rows) > 200


def test_noise_only_record_exits_3(tmp_path):
    rng = np.random.default_rng(0)
    iq, est = tmp_path / "n.bin", tmp_path / "e.csv"
    write_iq(IQRecord(rng.standard_normal(50_000) + 1j * rng.standard_normal(50_000), 5e8), iq)
    assert main(["analyze", str(iq), "--eta", "2e7", "--snippets", "500",
                 "-o", str(est)]) == EXIT_NO_SIGNAL
    assert read_estimates_csv(est) == []


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["gen", "no-such-example", "-o", str(tmp_path / "x.bin")]) == EXIT_CONFIG
    assert main(["gen", "example1", "-o", str(tmp_path / "x.bin"), "--rate", "5e7"]) \
        == EXIT_CONFIG
    assert main(["analyze", str(tmp_path / "missing.bin"), "-o", "e.csv", "--eta", "1"]) \
        == EXIT_CONFIG
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["sweep"])
    assert exc.value.code == 2


def test_sweep_partial_exits_4(tmp_path, capsys):
    out = tmp_path / "s.csv"
    # the second rate cannot hold the scenario's band: that cell is reported missing
    code = main(["sweep", "crossover", "--snr", "0", "--rates", "5e8,5e7", "--trials", "1",
                 "--snippets", "500", "-o", str(out)])
    assert code == EXIT_PARTIAL
    assert len(out.read_text().splitlines()) == 2
    assert "missing" in capsys.readouterr().out


def test_probe_noise(capsys):
    assert main(["probe-noise", "--n", "64,256", "--trials", "16"]) == EXIT_OK
    cap = capsys.readouterr()
    assert cap.out.splitlines()[0] == "n,mean_max,p95_max"
    assert "slope" in cap.err
