from l2f.cli import EXIT_OK, main
from l2f.selftest import CHECKS, SelfTestReport, run_selftest


def test_every_check_passes():
    report = run_selftest()
    failed = [r for r in report.results if not r.passed]
    assert not failed, report.format()
    assert len(report.results) == len(CHECKS)


def test_selftest_command(capsys):
    assert main(['selftest']) == EXIT_OK
    assert f'{len(CHECKS)}/{len(CHECKS)} checks passed' in capsys.readouterr().out


def test_empty_report_passes():
    assert SelfTestReport().passed
