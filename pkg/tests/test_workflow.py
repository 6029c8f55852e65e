"""Orchestrator checks: config round trips, cache soundness, manifest
determinism, per-task failure isolation, plot emission, CLI exit codes.

The end-to-end run is verified against the library functions it wires
together (same numbers must come back out of the CSVs), and re-running a
manifest must reproduce every output checksum.
"""

import glob
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from ethydro import cli, store, workflow
from ethydro.errors import CapExceeded, ConfigError, TaskError
from ethydro.lattice import build_hamiltonian, build_observable, preset_spec
from ethydro.spectra import (
    diagonal_ensemble_variance,
    diagonal_matrix_elements,
    eigen_blocks,
)
from ethydro.workflow import (
    RunConfig,
    RunManifest,
    config_from_dict,
    from_ini_text,
    parse_observable,
    resolved,
    run,
    task_seed,
    to_ini,
    to_json,
)


# ============================================================
# configuration
# ============================================================


def test_config_every_field_defaulted():
    cfg = RunConfig()
    d = resolved(cfg)
    # nothing missing, nothing undefined: the manifest serializes this
    for key, val in d.items():
        assert not (isinstance(val, str) and val == ""), key
    assert d["preset"] == "tilted-ising-paper"
    assert d["lengths"] == [6]
    assert config_from_dict(d) == cfg


def test_config_ini_roundtrip_preset():
    cfg = RunConfig(lengths=(6, 8), betas=(0.0, 0.5),
                    observables=("sx1", "sx1sx2"), method="both",
                    fit_window=(2.0, 9.0), n_p=7, bin_width=0.03,
                    seed_base=99, workers=2)
    assert from_ini_text(to_ini(cfg)) == cfg


def test_config_ini_roundtrip_explicit_model():
    cfg = RunConfig.make(model="long_range_ising",
                         couplings={"J": 2.0, "h_x": 1.1, "alpha": 1.5},
                         lengths=(5,), method="dqt", t_max=8.0)
    back = from_ini_text(to_ini(cfg))
    assert back == cfg
    assert back.preset is None
    assert dict(back.couplings)["alpha"] == 1.5


def test_config_json_roundtrip():
    cfg = RunConfig(betas=(0.2,), observables=("sz2",), roi_tol=0.3)
    assert config_from_dict(json.loads(to_json(cfg))) == cfg


def test_config_validation():
    with pytest.raises(ConfigError):
        RunConfig(method="exact")
    with pytest.raises(ConfigError):
        RunConfig(model="tilted_ising")  # and the default preset: ambiguous
    with pytest.raises(ConfigError):
        RunConfig.make(preset=None)
    with pytest.raises(ConfigError):
        RunConfig(fit_window=(5.0, 2.0))
    with pytest.raises(ConfigError):
        RunConfig(lengths=())
    with pytest.raises(ConfigError):
        RunConfig(betas=(-0.1,))
    with pytest.raises(ConfigError):
        RunConfig(observables=("bogus",))
    with pytest.raises(ConfigError):
        RunConfig(workers=0)


def test_parse_observable():
    d = parse_observable("sx1")
    assert d.factors == ((1, "x"),)
    d = parse_observable("sx1sx2sx3")
    assert d.factors == ((1, "x"), (2, "x"), (3, "x"))
    assert d.name == "sx1sx2sx3"
    assert parse_observable("sy3").factors == ((3, "y"),)
    for bad in ("s1", "xs1", "sx", "sx1junk", "sx0"):
        with pytest.raises(ConfigError):
            parse_observable(bad)


def test_task_seed_stable_and_distinct():
    a = task_seed(7041, "eth:L6-b0-sx1")
    assert a == task_seed(7041, "eth:L6-b0-sx1")
    assert a != task_seed(7041, "eth:L8-b0-sx1")
    assert a != task_seed(7042, "eth:L6-b0-sx1")
    assert 0 <= a < 2**31 - 1


# ============================================================
# CSV primitives
# ============================================================


def test_csv_roundtrip_exact(tmp_path):
    path = str(tmp_path / "t.csv")
    x = np.array([0.1, 1.0 / 3.0, 7.25e-19])
    k = np.array([1, 2, 30], dtype=np.int64)
    store.write_csv(path, ["x", "k"], [x, k], comments=["hello", "world"])
    names, cols, comments = store.read_csv(path)
    assert names == ["x", "k"]
    assert np.array_equal(cols["x"], x)  # repr round trip is exact
    assert np.array_equal(cols["k"], k.astype(float))
    assert "hello" in comments


def test_csv_validation(tmp_path):
    with pytest.raises(ConfigError):
        store.write_csv(str(tmp_path / "a.csv"), ["x"], [[1.0], [2.0]])
    with pytest.raises(ConfigError):
        store.write_csv(str(tmp_path / "b.csv"), ["x", "y"],
                        [[1.0, 2.0], [3.0]])
    junk = tmp_path / "c.csv"
    junk.write_text("# only comments\n")
    with pytest.raises(ConfigError):
        store.read_csv(str(junk))


# ============================================================
# binary eigen cache
# ============================================================


@pytest.fixture(scope="module")
def small_eig():
    spec = preset_spec("tilted-ising-paper", 4)
    h = build_hamiltonian(spec)
    blocks = eigen_blocks(h, via="dense")
    return spec, blocks[0][1]


def test_cache_roundtrip(tmp_path, small_eig):
    spec, spectrum = small_eig
    path = str(tmp_path / "x.eig")
    store.save_spectrum_cache(path, spec, "all", spectrum)
    back = store.load_spectrum_cache(path, spec, "all")
    assert np.array_equal(back.energies, spectrum.energies)
    assert np.array_equal(back.eigenvectors, spectrum.eigenvectors)


def test_cache_rejects_other_spec(tmp_path, small_eig):
    spec, spectrum = small_eig
    path = str(tmp_path / "x.eig")
    store.save_spectrum_cache(path, spec, "all", spectrum)
    other = preset_spec("tilted-ising-paper", 5)
    with pytest.raises(store.CacheInvalid):
        store.load_spectrum_cache(path, other, "all")
    with pytest.raises(store.CacheInvalid):
        store.load_spectrum_cache(path, spec, "k0")


def test_cache_detects_corruption(tmp_path, small_eig):
    spec, spectrum = small_eig
    path = str(tmp_path / "x.eig")
    store.save_spectrum_cache(path, spec, "all", spectrum)
    blob = bytearray(open(path, "rb").read())
    blob[-5] ^= 0x01  # one bit deep in the eigenvector payload
    open(path, "wb").write(bytes(blob))
    with pytest.raises(store.CacheInvalid):
        store.load_spectrum_cache(path, spec, "all")
    open(path, "wb").write(b"ETHYDRO-EIGCACHE\ngarbage")
    with pytest.raises(store.CacheInvalid):
        store.load_spectrum_cache(path, spec, "all")
    open(path, "wb").write(b"not even close")
    with pytest.raises(store.CacheInvalid):
        store.load_spectrum_cache(path, spec, "all")


def test_cache_vectorless_entry_rejected_when_vectors_needed(tmp_path, small_eig):
    spec, spectrum = small_eig
    path = str(tmp_path / "x.eig")
    bare = type(spectrum)(energies=spectrum.energies, eigenvectors=None)
    store.save_spectrum_cache(path, spec, "all", bare)
    got = store.load_spectrum_cache(path, spec, "all", want_vectors=False)
    assert got.eigenvectors is None
    with pytest.raises(store.CacheInvalid):
        store.load_spectrum_cache(path, spec, "all", want_vectors=True)


def test_load_or_build_uses_cache(tmp_path, small_eig):
    spec, _ = small_eig
    h = build_hamiltonian(spec)
    cache = str(tmp_path / "cache")
    blocks1, files = store.load_or_build_blocks(spec, h, "dense", cache)
    stamp = os.path.getmtime(files[0])
    blocks2, _ = store.load_or_build_blocks(spec, h, "dense", cache)
    assert os.path.getmtime(files[0]) == stamp  # hit, not rewritten
    assert np.array_equal(blocks1[0][1].energies, blocks2[0][1].energies)


# ============================================================
# the pipeline, end to end
# ============================================================


@pytest.fixture(scope="module")
def example_run(tmp_path_factory):
    """The documented two-size example: preset chain, ed route, sx1."""
    out = str(tmp_path_factory.mktemp("example"))
    cfg = RunConfig(lengths=(6, 8), betas=(0.0,), observables=("sx1",),
                    method="ed", out_dir=out)
    manifest = run(cfg)
    return cfg, manifest


def test_example_all_tasks_done(example_run):
    _, m = example_run
    assert all(t["status"] == "done" for t in m.tasks), \
        [(t["id"], t["error"]) for t in m.tasks if t["status"] != "done"]
    kinds = sorted(t["kind"] for t in m.tasks)
    assert kinds == sorted(["spectrum", "spectrum", "gap_ratio", "eth", "eth",
                            "overlap", "overlap", "verdict", "verdict",
                            "plateau"])


def test_example_emits_per_size_artifacts(example_run):
    _, m = example_run
    for L in (6, 8):
        for prefix in ("diag", "f2-ed", "autocorr-ed", "moments"):
            name = f"{prefix}-L{L}-b0-sx1.csv"
            assert name in m.outputs, name
            assert os.path.exists(os.path.join(m.out_dir, name))


def test_example_overlap_order_one_and_saturated(example_run):
    _, m = example_run
    for L in (6, 8):
        ov = m.task(f"overlap:L{L}-b0-sx1")["results"]
        assert ov["order"] == 1.0
        v = m.task(f"verdict:L{L}-b0-sx1")["results"]
        assert v["m"] == 1.0
        assert v["bound"] == pytest.approx(0.5)
        assert v["satisfied"] is True
        assert v["saturated"] is True


def test_example_csv_matches_library(example_run):
    """The orchestrator must write exactly what the library computes."""
    _, m = example_run
    spec = preset_spec("tilted-ising-paper", 6)
    h = build_hamiltonian(spec)
    o = build_observable(6, parse_observable("sx1"))
    blocks = eigen_blocks(h, via="dense")

    _, cols, _ = store.read_csv(os.path.join(m.out_dir, "diag-L6-b0-sx1.csv"))
    energies, diags = diagonal_matrix_elements(blocks, o)
    assert cols["energy"].size == 729
    assert np.allclose(cols["energy"], energies, atol=1e-12)
    assert np.allclose(cols["obs_diag"], diags, atol=1e-12)

    plat = diagonal_ensemble_variance(blocks, o, beta=0.0)
    rec = m.task("eth:L6-b0-sx1")["results"]
    assert rec["plateau"] == pytest.approx(plat, rel=1e-12)

    _, cols, _ = store.read_csv(
        os.path.join(m.out_dir, "autocorr-ed-L6-b0-sx1.csv"))
    assert cols["t"][0] == 0.0
    assert cols["re_c"][0] == pytest.approx(2.0 / 3.0, abs=1e-8)


def test_example_gap_ratio_row_per_size(example_run):
    _, m = example_run
    _, cols, _ = store.read_csv(os.path.join(m.out_dir, "gap-ratio.csv"))
    assert list(cols["L"]) == [6.0, 8.0]
    assert np.all(cols["r"] > 0.35) and np.all(cols["r"] < 0.6)


def test_example_plateau_csv(example_run):
    _, m = example_run
    _, cols, _ = store.read_csv(os.path.join(m.out_dir, "plateau-b0-sx1.csv"))
    assert list(cols["L"]) == [6.0, 8.0]
    assert np.all(cols["plateau"] > 0)
    assert m.task("plateau:b0-sx1")["results"]["n_sizes"] == 2


def test_example_manifest_load_roundtrip(example_run):
    _, m = example_run
    loaded = RunManifest.load(os.path.join(m.out_dir, "manifest.json"))
    assert loaded.outputs == m.outputs
    assert loaded.config == m.config
    assert [t["id"] for t in loaded.tasks] == [t["id"] for t in m.tasks]


def test_rerun_reproduces_checksums(example_run, tmp_path):
    """Determinism contract: re-running a manifest reproduces every byte."""
    _, m = example_run
    m2 = workflow.rerun(os.path.join(m.out_dir, "manifest.json"),
                        out_dir=str(tmp_path / "again"))
    assert m2.outputs == m.outputs


def test_cache_corruption_rebuilds_identically(tmp_path):
    out = str(tmp_path / "r")
    cfg = RunConfig(lengths=(6,), observables=("sx1",), out_dir=out)
    m1 = run(cfg)
    victim = sorted(glob.glob(os.path.join(out, "cache", "*.eig")))[0]
    blob = bytearray(open(victim, "rb").read())
    blob[len(blob) // 2] ^= 0xFF
    open(victim, "wb").write(bytes(blob))
    m2 = run(cfg)
    assert any("rebuilding" in n for n in m2.notices)
    assert m2.outputs == m1.outputs


def test_empty_observables_only_caches_spectra(tmp_path):
    out = str(tmp_path / "r")
    cfg = RunConfig(lengths=(6,), observables=(), out_dir=out)
    m = run(cfg)
    kinds = {t["kind"] for t in m.tasks}
    assert kinds == {"spectrum", "gap_ratio"}
    assert glob.glob(os.path.join(out, "cache", "*.eig"))
    assert all(t["status"] == "done" for t in m.tasks)


def test_dqt_route_deterministic(tmp_path):
    cfg = RunConfig(lengths=(5,), observables=("sx1",), method="dqt",
                    n_p=3, t_max=6.0, out_dir="unused")
    m1 = run(cfg, out_dir=str(tmp_path / "a"))
    m2 = run(cfg, out_dir=str(tmp_path / "b"))
    assert m1.outputs == m2.outputs
    assert "autocorr-dqt-L5-b0-sx1.csv" in m1.outputs
    assert not any(t["kind"] == "spectrum" for t in m1.tasks)
    v = m1.task("verdict:L5-b0-sx1")["results"]
    assert v["source"] == "dqt"
    rec = m1.task("dqt:L5-b0-sx1")
    assert rec["seed"] == task_seed(cfg.seed_base, "dqt:L5-b0-sx1")
    assert rec["results"]["n_p"] == 3


def test_worker_count_does_not_change_outputs(tmp_path):
    base = dict(lengths=(5,), observables=("sx1",), method="ed", t_max=8.0)
    m1 = run(RunConfig(workers=1, **base), out_dir=str(tmp_path / "w1"))
    m3 = run(RunConfig(workers=3, **base), out_dir=str(tmp_path / "w3"))
    # config echoes record the differing workers field; data must not move
    skip = {"config.ini", "config.json"}
    d1 = {k: v for k, v in m1.outputs.items() if k not in skip}
    d3 = {k: v for k, v in m3.outputs.items() if k not in skip}
    assert d1 == d3 and len(d1) > 5


def test_failed_task_does_not_abort_siblings(tmp_path):
    # sz9 does not fit on six sites: its tasks fail, sx1 still completes
    out = str(tmp_path / "r")
    cfg = RunConfig(lengths=(6,), observables=("sx1", "sz9"), out_dir=out)
    m = run(cfg)
    by_id = {t["id"]: t for t in m.tasks}
    assert by_id["eth:L6-b0-sx1"]["status"] == "done"
    assert by_id["verdict:L6-b0-sx1"]["status"] == "done"
    bad = by_id["eth:L6-b0-sz9"]
    assert bad["status"] == "failed"
    assert bad["error_kind"] == "ConfigError"
    assert "site" in bad["error"]
    assert by_id["verdict:L6-b0-sz9"]["status"] == "skipped"
    assert by_id["plateau:b0-sz9"]["status"] == "failed"
    assert os.path.exists(os.path.join(out, "manifest.json"))


# ============================================================
# plot scripts
# ============================================================


def test_plots_emitted_with_verdict_guides(example_run):
    _, m = example_run
    for name in ("plot_autocorr.py", "plot_f2.py", "plot_plateau.py",
                 "plot_gap_ratio.py"):
        assert name in m.outputs
    text = open(os.path.join(m.out_dir, "plot_autocorr.py")).read()
    # guide slope comes from the verdict bound, stamped at emission time
    assert "nu = 0.5" in text
    text = open(os.path.join(m.out_dir, "plot_f2.py")).read()
    assert "om ** -0.5" in text  # the order-1 singularity guide


@pytest.mark.slow
def test_plot_scripts_run_headless(example_run):
    _, m = example_run
    for name, png in [("plot_autocorr.py", "autocorr.png"),
                      ("plot_gap_ratio.py", "gap_ratio.png")]:
        r = subprocess.run([sys.executable, os.path.join(m.out_dir, name)],
                           capture_output=True, text=True)
        assert r.returncode == 0, r.stderr
        assert os.path.exists(os.path.join(m.out_dir, png))


def test_plots_skip_missing_csv(example_run, tmp_path):
    _, m = example_run
    other = str(tmp_path / "elsewhere")
    os.makedirs(other)
    notices = []
    scripts = store.emit_plots(m, out_dir=other, notices=notices)
    assert scripts == []  # no CSVs there at all
    assert any("missing" in n for n in notices)


def test_plots_empty_manifest_yields_nothing(tmp_path):
    empty = RunManifest(code_version="x", config={}, out_dir=str(tmp_path),
                        tasks=[])
    assert store.emit_plots(empty) == []
    assert not glob.glob(os.path.join(str(tmp_path), "plot_*.py"))


# ============================================================
# command line
# ============================================================


def test_cli_exit_code_config_error(capsys):
    assert cli.main(["run", "--badflag"]) == 1
    assert cli.main(["autocorr", "--method", "nope"]) == 1
    assert cli.main(["fit", "--csv", "/nonexistent/file.csv"]) == 1
    capsys.readouterr()


def test_cli_exit_code_task_and_cap(monkeypatch, capsys):
    monkeypatch.setattr(cli, "_cmd_build", lambda args: (_ for _ in ()).throw(
        TaskError("boom")))
    assert cli.main(["build"]) == 2
    monkeypatch.setattr(cli, "_cmd_build", lambda args: (_ for _ in ()).throw(
        CapExceeded("too big")))
    assert cli.main(["build"]) == 3
    capsys.readouterr()


def test_cli_build_prints_dimensions(capsys):
    assert cli.main(["build", "--length", "4"]) == 0
    out = capsys.readouterr().out
    assert "dim: 81" in out
    assert "tilted_ising" in out


def test_cli_overlap_reports_order_two(capsys):
    assert cli.main(["overlap", "--length", "5", "--observable", "sx1sx2"]) == 0
    out = capsys.readouterr().out
    assert "overlap order: 2" in out


def test_cli_hydro_decay(capsys):
    assert cli.main(["hydro", "--decay", "--z", "2", "--mu", "0",
                     "--window", "100,2000"]) == 0
    out = capsys.readouterr().out
    line = [l for l in out.splitlines() if l.startswith("exponent:")][0]
    assert float(line.split(":")[1]) == pytest.approx(-0.5, abs=0.01)


def test_cli_run_plus_plots(tmp_path, capsys):
    out = str(tmp_path / "r")
    rc = cli.main(["run", "-L", "5", "--observables", "sx1", "--method", "ed",
                   "--t-max", "8.0", "--out-dir", out])
    assert rc == 0
    assert os.path.exists(os.path.join(out, "manifest.json"))
    rc = cli.main(["plots", "--manifest", os.path.join(out, "manifest.json")])
    assert rc == 0
    text = capsys.readouterr().out
    assert "plot_autocorr.py" in text


def test_cli_autocorr_ed_writes_csv(tmp_path, capsys):
    out = str(tmp_path / "c.csv")
    rc = cli.main(["autocorr", "--length", "5", "--t-max", "4",
                   "--out-dir", str(tmp_path), "--out", out])
    assert rc == 0
    _, cols, _ = store.read_csv(out)
    assert cols["re_c"][0] == pytest.approx(2.0 / 3.0, abs=1e-8)
    capsys.readouterr()


def test_cli_config_file_with_overrides(tmp_path, capsys):
    ini = tmp_path / "cfg.ini"
    ini.write_text(to_ini(RunConfig(lengths=(5,), observables=("sx1",),
                                    method="ed", t_max=6.0)))
    out = str(tmp_path / "r")
    rc = cli.main(["run", "--config", str(ini), "--out-dir", out,
                   "--t-max", "4.0"])
    assert rc == 0
    cfg = json.load(open(os.path.join(out, "config.json")))
    assert cfg["t_max"] == 4.0
    assert cfg["lengths"] == [5]
    capsys.readouterr()
