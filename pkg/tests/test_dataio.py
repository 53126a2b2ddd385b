import json
import os

import numpy as np
import pytest

from arealclust import (
    ConfigError,
    DataError,
    Hyperparameters,
    RegimeSchedule,
    SamplerConfig,
    build_grid,
    run_chain,
    simulate_dataset,
    single_regime_scenario,
)
from arealclust import dataio

from ._support import tiny_problem


class TestLongCsv:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        values = rng.normal(size=(3, 4))
        mask = np.zeros((3, 4), dtype=bool)
        mask[1, 2] = True
        path = tmp_path / "data.csv"
        dataio.write_long_csv(values, mask, path)
        table = dataio.read_long_csv(path)
        assert np.array_equal(table.mask, mask)
        assert np.allclose(table.values[~mask], values[~mask])
        assert np.isnan(table.values[mask]).all()

    def test_bad_header_line_number(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c,d\n1,1,0.5,0\n")
        with pytest.raises(DataError, match="line 1"):
            dataio.read_long_csv(path)

    def test_bad_value_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("cell_id,time,value,missing\n1,1,0.5,0\n1,2,oops,0\n")
        with pytest.raises(DataError, match="line 3"):
            dataio.read_long_csv(path)

    def test_duplicate_record_rejected(self, tmp_path):
        path = tmp_path / "dup.csv"
        path.write_text(
            "cell_id,time,value,missing\n1,1,0.5,0\n1,1,0.7,0\n")
        with pytest.raises(DataError, match="duplicate"):
            dataio.read_long_csv(path)

    def test_incomplete_table_rejected(self, tmp_path):
        path = tmp_path / "gap.csv"
        path.write_text("cell_id,time,value,missing\n1,1,0.5,0\n2,2,0.7,0\n")
        with pytest.raises(DataError, match="expected 4 records"):
            dataio.read_long_csv(path)


class TestStandardize:
    def _table(self, values, mask=None):
        values = np.asarray(values, dtype=float)
        if mask is None:
            mask = np.zeros(values.shape, dtype=bool)
        return dataio.RawSeriesTable(values=values, mask=mask)

    def test_observed_entries_standardized(self):
        rng = np.random.default_rng(1)
        raw = np.abs(rng.normal(2.0, 1.0, size=(5, 8)))
        out, record = dataio.standardize(self._table(raw))
        obs = out.values[~out.mask]
        assert obs.mean() == pytest.approx(0.0, abs=1e-10)
        assert obs.std() == pytest.approx(1.0, abs=1e-10)

    def test_shift_is_smallest_nonzero(self):
        raw = np.array([[0.0, 2.0, 0.5, 4.0]])
        _, record = dataio.standardize(self._table(raw))
        assert record.shift == 0.5

    def test_odd_length_padded_with_missing_column(self):
        raw = np.abs(np.random.default_rng(2).normal(size=(4, 7))) + 0.1
        out, _ = dataio.standardize(self._table(raw))
        assert out.n_times == 8
        assert out.mask[:, -1].all()

    def test_roundtrip_inverse(self):
        rng = np.random.default_rng(3)
        raw = np.abs(rng.normal(3.0, 1.0, size=(4, 6))) + 0.01
        out, record = dataio.standardize(self._table(raw))
        back = record.invert(out.values)
        assert np.abs((back - raw) / raw).max() < 1e-10

    def test_all_zero_rejected(self):
        with pytest.raises(DataError):
            dataio.standardize(self._table(np.zeros((2, 2))))

    def test_all_missing_rejected(self):
        with pytest.raises(DataError):
            dataio.standardize(self._table(np.ones((2, 2)), np.ones((2, 2), bool)))


class TestFitConfig:
    def _config(self, **overrides):
        cfg = {
            "grid": {"rows": 2, "cols": 2},
            "schedule": {"T": 20},
            "design": {"frequencies": [1, 2]},
            "model": {"variant": "full", "kappa": 1.0, "xi": 0.5},
            "run": {"iterations": 10, "burn_in": 5, "seed": 3},
        }
        cfg.update(overrides)
        return cfg

    def test_parses_harmonic_design(self):
        topo, sched, (design, path), hyper_kwargs, run = dataio.parse_fit_config(
            self._config())
        assert design.shape == (20, 4)
        assert path is None
        assert run.iterations == 10
        assert hyper_kwargs["xi"] == 0.5

    def test_elicited_priors(self):
        cfg = self._config(priors={"tau2": {"mean": 1.0, "variance": 0.1}})
        _, _, _, hyper_kwargs, _ = dataio.parse_fit_config(cfg)
        assert hyper_kwargs["a_tau2"] == pytest.approx(12.0)
        assert hyper_kwargs["b_tau2"] == pytest.approx(11.0)

    def test_zeta_beta_prior(self):
        cfg = self._config(zeta={"beta": [2, 2], "step": 0.5})
        _, _, _, hyper_kwargs, run = dataio.parse_fit_config(cfg)
        assert hyper_kwargs["zeta_prior"] == (2.0, 2.0)
        assert run.zeta_step == 0.5

    def test_missing_sections_raise(self):
        with pytest.raises(ConfigError):
            dataio.parse_fit_config({"schedule": {"T": 10}})
        cfg = self._config()
        del cfg["run"]["iterations"]
        with pytest.raises(ConfigError):
            dataio.parse_fit_config(cfg)
        cfg = self._config(design={})
        with pytest.raises(ConfigError):
            dataio.parse_fit_config(cfg)


class TestDesignCsv:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(6, 3))
        path = tmp_path / "design.csv"
        dataio.write_design_csv(X, path)
        back = dataio.read_design_csv(path)
        assert np.array_equal(back, X)

    def test_gap_rejected(self, tmp_path):
        path = tmp_path / "design.csv"
        path.write_text("time,x1\n1,0.5\n3,0.7\n")
        with pytest.raises(DataError):
            dataio.read_design_csv(path)


class TestChainPersistence:
    def test_roundtrip_preserves_draws(self, tmp_path):
        data, hyper, _ = tiny_problem(seed=6)
        cfg = SamplerConfig(iterations=24, burn_in=12, thinning=3, seed=5)
        chain = run_chain(cfg, hyper, data)
        outdir = tmp_path / "chain"
        dataio.write_chain(chain, outdir, input_hashes={"data": "abc"})
        back = dataio.read_chain(outdir)
        assert back.n_draws == chain.n_draws
        assert np.array_equal(back.u, chain.u)
        assert np.array_equal(back.tau2, chain.tau2)
        assert np.array_equal(back.tbar, chain.tbar)
        assert np.array_equal(back.loglik, chain.loglik)
        assert np.array_equal(back.y_mis, chain.y_mis)
        assert np.array_equal(back.mask, data.mask)
        for d in range(chain.n_draws):
            assert back.partitions[d][0] == chain.partitions[d][0]
            assert np.array_equal(back.beta_star[d][0], chain.beta_star[d][0])
        assert back.config.seed == cfg.seed

    def test_manifest_contents(self, tmp_path):
        data, hyper, _ = tiny_problem(seed=7, with_missing=False)
        cfg = SamplerConfig(iterations=12, burn_in=6, thinning=2, seed=11)
        chain = run_chain(cfg, hyper, data)
        outdir = tmp_path / "chain"
        dataio.write_chain(chain, outdir, input_hashes={"data": "fff", "config": "abc"})
        manifest = json.loads((outdir / "manifest.json").read_text())
        assert manifest["seed"] == 11
        assert manifest["iterations"] == 12
        assert manifest["input_hashes"] == {"data": "fff", "config": "abc"}
        assert "elapsed" not in json.dumps(manifest)
        assert (outdir / "timing.txt").exists()

    def test_file_sha256_stable(self, tmp_path):
        p = tmp_path / "x.bin"
        p.write_bytes(b"hello")
        assert dataio.file_sha256(p) == dataio.file_sha256(p)


class TestPartitionJson:
    def test_roundtrip_one_based(self):
        from arealclust import Partition

        p = Partition(np.array([0, 1, 0, 2]))
        doc = dataio.partition_to_json_dict(p)
        assert doc == {"labels": [1, 2, 1, 3]}
        assert dataio.partition_from_json_dict(doc) == p

    def test_missing_key(self):
        with pytest.raises(DataError):
            dataio.partition_from_json_dict({"nope": []})
