import logging
import os

import pytest

import app
from models.errors import ContractViolation


@pytest.fixture(autouse=True)
def restore_root_logger():
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    for handler in root.handlers[:]:
        if handler not in handlers:
            root.removeHandler(handler)
            handler.close()
    for handler in handlers:
        if handler not in root.handlers:
            root.addHandler(handler)
    root.setLevel(level)


def run(tmp_path, *argv):
    return app.main([*argv, "--workdir", str(tmp_path / "work"), "--log-dir", str(tmp_path / "logs")])


class TestMain:
    def test_success_passes_resolved_config(self, tmp_path, mocker):
        stage = mocker.Mock()
        mocker.patch.dict("app.STAGE_FUNCTIONS", {"prepare": stage})
        assert run(tmp_path, "prepare", "--seed", "3", "--keep-short") == app.EXIT_OK
        cfg = stage.call_args.args[0]
        assert cfg.seed == 3
        assert cfg.keep_short is True
        assert cfg.workdir == str(tmp_path / "work")

    def test_contract_violation_exit_code(self, tmp_path, mocker):
        mocker.patch.dict("app.STAGE_FUNCTIONS", {"train": mocker.Mock(side_effect=ContractViolation("bad"))})
        assert run(tmp_path, "train") == app.EXIT_CONTRACT

    def test_unexpected_error_exit_code(self, tmp_path, mocker):
        mocker.patch.dict("app.STAGE_FUNCTIONS", {"train": mocker.Mock(side_effect=RuntimeError("boom"))})
        assert run(tmp_path, "train") == app.EXIT_UNEXPECTED

    def test_invalid_config_exit_code(self, tmp_path, mocker):
        stage = mocker.Mock()
        mocker.patch.dict("app.STAGE_FUNCTIONS", {"train": stage})
        assert run(tmp_path, "train", "--dim", "10", "--heads", "4") == app.EXIT_CONTRACT
        stage.assert_not_called()

    def test_missing_artifacts_exit_code(self, tmp_path):
        assert run(tmp_path, "evaluate") == app.EXIT_CONTRACT

    def test_log_file_written(self, tmp_path, mocker):
        mocker.patch.dict("app.STAGE_FUNCTIONS", {"prepare": mocker.Mock()})
        run(tmp_path, "prepare", "--debug")
        logs = os.listdir(tmp_path / "logs")
        assert len(logs) == 1 and logs[0].startswith("tmer_")
        assert logging.getLogger().level == logging.DEBUG


class TestParser:
    def test_unknown_command_rejected(self):
        with pytest.raises(SystemExit):
            app.build_parser().parse_args(["deploy"])

    def test_unset_flags_are_none(self):
        args = app.build_parser().parse_args(["run-all"])
        assert args.seed is None and args.keep_short is None and args.ablation is None

    @pytest.mark.parametrize("value", ["standard", "paper-literal", "negative-only"])
    def test_loss_choices(self, value):
        assert app.build_parser().parse_args(["train", "--loss", value]).loss == value

    def test_negative_term_loss_reaches_stage(self, tmp_path, mocker):
        stage = mocker.Mock()
        mocker.patch.dict("app.STAGE_FUNCTIONS", {"train": stage})
        assert run(tmp_path, "train", "--loss", "paper-literal") == app.EXIT_OK
        assert stage.call_args.args[0].loss == "paper-literal"
