import subprocess
import sys

import pytest

from rtosfi.cli import main
from rtosfi.config import ConfigError, default_config_text, load_config
from rtosfi.harness import GoldenProfile


@pytest.fixture
def small_ini(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text("[campaign]\nn_per_location = 2\n"
                    "targets = pxCurrentTCB, xTickCount, pxReadyTasksLists[0]\n"
                    "workers = 1\nseed = 3\n")
    return str(path)


def test_no_command(capsys):
    assert main([]) == 1
    assert "command" in capsys.readouterr().err


def test_bad_flag():
    assert main(["golden", "--frobnicate"]) == 1


def test_golden(tmp_path, capsys, golden):
    assert main(["golden", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "total_ticks 47" in out
    assert GoldenProfile.from_text((tmp_path / "golden.profile").read_text()) == golden


def test_targets_list(capsys):
    assert main(["targets", "list"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 47
    assert "pxCurrentTCB,pointer,4,always" in lines
    assert "xDelayedTaskList1,list,20,nonempty_list" in lines


def test_inject_crash(tmp_path, capsys):
    log = tmp_path / "one.log"
    rc = main(["--out", str(tmp_path), "inject", "--target", "pxCurrentTCB", "--byte", "3",
               "--bit", "7", "--at", "1:0", "--log", str(log)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "outcome CRASH" in out and "invalid_handle" in out
    text = log.read_text().splitlines()
    assert text[0].startswith("fault target=pxCurrentTCB")
    assert text[-1].startswith("panic reason=invalid_handle")


def test_inject_default_log_path(tmp_path, capsys):
    assert main(["inject", "--target", "xTickCount", "--out", str(tmp_path)]) == 0
    assert list((tmp_path / "logs").glob("inject_xTickCount_*.log"))


def test_inject_permanent_stuck(tmp_path, capsys):
    rc = main(["inject", "--target", "currentTCB.uxPriority", "--bit", "6", "--type",
               "permanent", "--stuck", "1", "--out", str(tmp_path)])
    assert rc == 0
    assert "(0->1)" in capsys.readouterr().out


def test_inject_errors(tmp_path, capsys):
    assert main(["inject", "--target", "nosuch", "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "nosuch" in err and "pxCurrentTCB" in err
    assert main(["inject", "--target", "xTickCount", "--byte", "9", "--out", str(tmp_path)]) == 1
    assert main(["inject", "--target", "xTickCount", "--stuck", "1",
                 "--out", str(tmp_path)]) == 1
    assert main(["inject", "--target", "xTickCount", "--at", "x", "--out", str(tmp_path)]) == 1


def test_campaign_and_report(tmp_path, small_ini, capsys):
    out = tmp_path / "camp"
    assert main(["--config", small_ini, "campaign", "--out", str(out)]) == 0
    assert "12 runs" in capsys.readouterr().out
    runs = (out / "runs.csv").read_bytes()
    summary = (out / "report.summary").read_bytes()
    assert main(["report", str(out)]) == 0
    assert capsys.readouterr().out.encode() == summary
    assert (out / "report.summary").read_bytes() == summary
    assert (out / "runs.csv").read_bytes() == runs


def test_campaign_seed_override(tmp_path, small_ini):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["campaign", "--config", small_ini, "--seed", "9", "--out", str(a)]) == 0
    assert main(["campaign", "--config", small_ini, "--seed", "9", "--workers", "2",
                 "--out", str(b)]) == 0
    assert (a / "runs.csv").read_bytes() == (b / "runs.csv").read_bytes()
    assert ",9\n" in (a / "runs.csv").read_text()


def test_report_missing_runs(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == 2


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[campaign]\nconfidance = 0.9\n")
    assert main(["--config", str(bad), "targets", "list"]) == 1
    assert "confidance" in capsys.readouterr().err
    bad.write_text("[extras]\nx = 1\n")
    assert main(["--config", str(bad), "golden"]) == 1
    bad.write_text("[campaign]\nmargin = 2\n")
    assert main(["--config", str(bad), "campaign"]) == 1
    assert main(["--config", str(tmp_path / "absent.ini"), "golden"]) == 1


def test_default_config_round_trip(tmp_path):
    path = tmp_path / "default.ini"
    path.write_text(default_config_text())
    assert load_config(str(path)) == load_config()


def test_config_values(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[campaign]\nfault_types = permanent\nstuck_value = 0\npopulation = 5000\n"
                    "[workloads]\nsha_yield_stride = 4\n")
    s = load_config(str(path))
    assert s.campaign.fault_types == ("permanent",)
    assert s.campaign.stuck_value == 0
    assert s.campaign.per_location == 588
    assert [w.yield_stride for w in s.workloads if w.id == "SHA"] == [4]
    with pytest.raises(ConfigError):
        s.with_overrides(workers=0)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "rtosfi", "targets", "list"],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 0
    assert len(proc.stdout.splitlines()) == 47
