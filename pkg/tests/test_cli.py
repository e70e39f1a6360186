import csv
import json

import numpy as np
import pytest

from covbalance.cli import main
from covbalance.stateio import (
    load_state,
    read_assignments_csv,
    read_covariates_csv,
    save_state,
    write_covariates_csv,
)
from covbalance import CovariateSet, Partition


def write_csv(path, n, p, rng, prefix="u"):
    data = CovariateSet.from_values(rng.normal(size=(n, p)), id_prefix=prefix)
    write_covariates_csv(path, data)
    return data


GA_FLAGS = ["--pop", "12", "--elites", "4", "--iters", "8"]


class TestDesignCommand:
    def test_end_to_end(self, tmp_path, rng, capsys):
        inp = tmp_path / "units.csv"
        write_csv(inp, 10, 2, rng)
        out_csv = tmp_path / "assignments.csv"
        out_json = tmp_path / "report.json"
        rc = main(
            ["design", "--input", str(inp), "--groups", "2", *GA_FLAGS,
             "--seed", "5", "--out-assignments", str(out_csv), "--out-report", str(out_json)]
        )
        assert rc == 0
        rows = read_assignments_csv(out_csv)
        assert len(rows) == 10
        groups = [g for _, g, _ in rows]
        assert groups.count(1) == 5 and groups.count(2) == 5
        report = json.loads(out_json.read_text())
        assert report["criterion"] >= 0
        assert report["seed"] == 5
        assert "designed 10 units" in capsys.readouterr().out

    def test_byte_identical_reruns(self, tmp_path, rng):
        inp = tmp_path / "units.csv"
        write_csv(inp, 8, 1, rng)
        outputs = []
        for tag in ("a", "b"):
            out_csv = tmp_path / f"asg_{tag}.csv"
            out_json = tmp_path / f"rep_{tag}.json"
            assert main(
                ["design", "--input", str(inp), "--groups", "2", *GA_FLAGS,
                 "--seed", "7", "--out-assignments", str(out_csv),
                 "--out-report", str(out_json)]
            ) == 0
            outputs.append((out_csv.read_bytes(), out_json.read_bytes()))
        assert outputs[0] == outputs[1]

    def test_round_trip_partition(self, tmp_path, rng):
        inp = tmp_path / "units.csv"
        data = write_csv(inp, 9, 2, rng)
        out_csv = tmp_path / "assignments.csv"
        assert main(
            ["design", "--input", str(inp), "--groups", "3", *GA_FLAGS,
             "--out-assignments", str(out_csv), "--out-report", str(tmp_path / "r.json")]
        ) == 0
        rows = read_assignments_csv(out_csv)
        by_id = {uid: group for uid, group, _ in rows}
        rebuilt = Partition(np.array([by_id[uid] for uid in data.unit_ids]), 3)
        assert rebuilt.sizes == (3, 3, 3)

    def test_malformed_cell_names_row_column(self, tmp_path, capsys):
        inp = tmp_path / "bad.csv"
        inp.write_text("unit_id,z1,z2\na,1.0,2.0\nb,oops,3.0\n")
        rc = main(
            ["design", "--input", str(inp), "--groups", "2", *GA_FLAGS,
             "--out-assignments", str(tmp_path / "x.csv"),
             "--out-report", str(tmp_path / "x.json")]
        )
        assert rc == 1
        err = capsys.readouterr().err
        assert "row 3" in err and "column 2" in err

    def test_missing_input_is_data_error(self, tmp_path):
        rc = main(
            ["design", "--input", str(tmp_path / "nope.csv"), "--groups", "2", *GA_FLAGS,
             "--out-assignments", str(tmp_path / "x.csv"),
             "--out-report", str(tmp_path / "x.json")]
        )
        assert rc == 1

    def test_usage_error_exit_code(self):
        with pytest.raises(SystemExit) as err:
            main(["design", "--groups", "2"])  # missing required flags
        assert err.value.code == 2

    def test_too_few_units_is_data_error(self, tmp_path, rng):
        inp = tmp_path / "units.csv"
        write_csv(inp, 2, 1, rng)
        rc = main(
            ["design", "--input", str(inp), "--groups", "5", *GA_FLAGS,
             "--out-assignments", str(tmp_path / "x.csv"),
             "--out-report", str(tmp_path / "x.json")]
        )
        assert rc == 1


class TestOnlineCommands:
    def run_init(self, tmp_path, rng, n=8, seed="3"):
        first = tmp_path / "first.csv"
        write_csv(first, n, 2, rng, prefix="f")
        state = tmp_path / "state.json"
        rc = main(
            ["init", "--input", str(first), "--groups", "2", *GA_FLAGS,
             "--seed", seed, "--state", str(state),
             "--out-assignments", str(tmp_path / "asg0.csv")]
        )
        assert rc == 0
        return state

    def test_init_then_assign_batches(self, tmp_path, rng):
        state = self.run_init(tmp_path, rng)
        for k, size in enumerate((4, 6)):
            batch = tmp_path / f"batch{k}.csv"
            write_csv(batch, size, 2, rng, prefix=f"b{k}_")
            rc = main(
                ["assign", "--state", str(state), "--batch", str(batch),
                 "--out-assignments", str(tmp_path / f"asg{k + 1}.csv")]
            )
            assert rc == 0
        loaded = load_state(state)
        assert loaded.covariates.n == 18
        sizes = loaded.group_sizes
        assert max(sizes) - min(sizes) <= 1

    def test_assign_replay_identical(self, tmp_path, rng):
        state_path = self.run_init(tmp_path, rng)
        snapshot = state_path.read_bytes()
        batch = tmp_path / "batch.csv"
        write_csv(batch, 4, 2, rng, prefix="b")
        results = []
        for k in range(2):
            state_path.write_bytes(snapshot)  # rewind
            out = tmp_path / f"replay{k}.csv"
            assert main(
                ["assign", "--state", str(state_path), "--batch", str(batch),
                 "--out-assignments", str(out)]
            ) == 0
            results.append(out.read_bytes())
        assert results[0] == results[1]

    def test_corrupted_state_detected(self, tmp_path, rng, capsys):
        state_path = self.run_init(tmp_path, rng)
        document = json.loads(state_path.read_text())
        current = document["payload"]["units"]["groups"][0]
        document["payload"]["units"]["groups"][0] = 2 if current == 1 else 1  # tamper
        state_path.write_text(json.dumps(document))
        batch = tmp_path / "batch.csv"
        write_csv(batch, 2, 2, rng, prefix="b")
        rc = main(
            ["assign", "--state", str(state_path), "--batch", str(batch),
             "--out-assignments", str(tmp_path / "x.csv")]
        )
        assert rc == 1
        assert "checksum" in capsys.readouterr().err

    def test_append_mode(self, tmp_path, rng):
        state = self.run_init(tmp_path, rng)
        out = tmp_path / "log.csv"
        for k in range(2):
            batch = tmp_path / f"batch{k}.csv"
            write_csv(batch, 2, 2, rng, prefix=f"x{k}_")
            assert main(
                ["assign", "--state", str(state), "--batch", str(batch),
                 "--out-assignments", str(out), "--append"]
            ) == 0
        assert len(read_assignments_csv(out)) == 4

    def test_balance_off_flag(self, tmp_path, rng):
        first = tmp_path / "first.csv"
        write_csv(first, 6, 1, rng, prefix="f")
        state = tmp_path / "state.json"
        rc = main(
            ["init", "--input", str(first), "--groups", "2", *GA_FLAGS,
             "--balance", "off", "--state", str(state)]
        )
        assert rc == 0
        assert load_state(state).balance == "batch"


class TestRemoteServer:
    def test_design_against_live_server(self, tmp_path, rng):
        import threading
        import time

        import uvicorn

        from covbalance.service.app import create_app

        config = uvicorn.Config(
            create_app(), host="127.0.0.1", port=0, log_level="error"
        )
        server = uvicorn.Server(config)
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        deadline = time.time() + 10
        while not server.started:
            if time.time() > deadline:
                pytest.skip("server did not start")
            time.sleep(0.02)
        port = server.servers[0].sockets[0].getsockname()[1]
        try:
            inp = tmp_path / "units.csv"
            write_csv(inp, 8, 2, rng)
            rc = main(
                ["design", "--input", str(inp), "--groups", "2", *GA_FLAGS,
                 "--server", f"http://127.0.0.1:{port}",
                 "--out-assignments", str(tmp_path / "a.csv"),
                 "--out-report", str(tmp_path / "r.json")]
            )
            assert rc == 0
            assert len(read_assignments_csv(tmp_path / "a.csv")) == 8
        finally:
            server.should_exit = True
            thread.join(timeout=5)


class TestSimulateCommand:
    def test_tiny_run(self, tmp_path, capsys):
        out_csv = tmp_path / "rows.csv"
        out_json = tmp_path / "summary.json"
        rc = main(
            ["simulate", "--scenario", "case1", "--groups", "2", "--n", "20",
             "--replicates", "1", "--seed", "4", "--pop", "10", "--elites", "2",
             "--iters", "5", "--out-csv", str(out_csv), "--out-json", str(out_json)]
        )
        assert rc == 0
        with open(out_csv) as handle:
            rows = list(csv.DictReader(handle))
        assert len(rows) == 8
        summary = json.loads(out_json.read_text())
        assert summary["summary"]["optimized"]["criterion"]["median"] >= 0

    def test_unknown_scenario_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as err:
            main(["simulate", "--scenario", "bogus", "--out-csv", "x", "--out-json", "y"])
        assert err.value.code == 2


class TestStateIo:
    def test_state_save_load_round_trip(self, tmp_path, rng):
        from covbalance import GaConfig, init_online

        data = CovariateSet.from_values(rng.normal(size=(10, 2)), id_prefix="s")
        state, _ = init_online(
            data, 2, GaConfig(population_size=10, elite_count=2, max_generations=5), 3
        )
        path = tmp_path / "state.json"
        save_state(path, state)
        loaded = load_state(path)
        assert np.array_equal(loaded.groups, state.groups)
        np.testing.assert_array_equal(loaded.covariates.values, state.covariates.values)
        assert loaded.group_to_treatment == state.group_to_treatment
        assert loaded.rng.bit_generator.state == state.rng.bit_generator.state
        assert loaded.bandwidth.tag == state.bandwidth.tag

    def test_covariates_csv_round_trip(self, tmp_path, rng):
        data = CovariateSet.from_values(rng.normal(size=(6, 3)), id_prefix="r")
        path = tmp_path / "cov.csv"
        write_covariates_csv(path, data, names=("a", "b", "c"))
        loaded, names = read_covariates_csv(path)
        assert names == ("a", "b", "c")
        assert loaded.unit_ids == data.unit_ids
        np.testing.assert_array_equal(loaded.values, data.values)

    def test_empty_csv_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        from covbalance.errors import DataFormatError

        with pytest.raises(DataFormatError, match="header"):
            read_covariates_csv(path)

    def test_field_count_mismatch(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("unit_id,z1\na,1.0\nb,1.0,2.0\n")
        from covbalance.errors import DataFormatError

        with pytest.raises(DataFormatError, match="row 3"):
            read_covariates_csv(path)
