import os
import sys
import time
import argparse
import logging
from logging.handlers import RotatingFileHandler
from typing import List, Optional

from dotenv import load_dotenv

from models.config import load_config, log_config
from models.errors import TMERError
from services import STAGE_FUNCTIONS

# Load environment variables from .env file
load_dotenv()

# Get logger for this module
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONTRACT = 2


# Configure logging
def setup_logging(development_mode=False, log_dir=None):
    """Set up logging configuration with file output."""
    # Create logs directory if it doesn't exist
    logs_dir = log_dir or os.path.join(os.path.dirname(os.path.abspath(__file__)), 'logs')
    os.makedirs(logs_dir, exist_ok=True)

    # Configure logging level based on mode
    log_level = logging.DEBUG if development_mode else logging.INFO

    # Create log filename with timestamp
    timestamp = time.strftime('%Y%m%d_%H%M%S')
    log_filepath = os.path.join(logs_dir, f'tmer_{timestamp}.log')

    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(filename)s:%(lineno)d - %(message)s'
    )

    root_logger = logging.getLogger()
    root_logger.setLevel(log_level)

    # Remove existing handlers to avoid duplication
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    # File handler with rotation
    file_handler = RotatingFileHandler(
        log_filepath,
        maxBytes=10*1024*1024,  # 10MB
        backupCount=5
    )
    file_handler.setLevel(log_level)
    file_handler.setFormatter(formatter)
    root_logger.addHandler(file_handler)

    console_handler = logging.StreamHandler()
    console_handler.setLevel(log_level)
    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)

    return log_filepath


def build_parser() -> argparse.ArgumentParser:
    """Command-line surface; every option defaults to None so unset flags fall through to file/env/defaults."""
    parser = argparse.ArgumentParser(prog="tmer", description="Temporal meta-path explainable recommendation pipeline")
    parser.add_argument("command", choices=sorted(STAGE_FUNCTIONS))

    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--workdir")
    parser.add_argument("--interactions", help="TSV of user_key, item_key, unix_timestamp")
    parser.add_argument("--metadata", help="TSV of item_key, brand_key, category_key")
    parser.add_argument("--dataset", help="dataset label; selects the default learning rate")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--debug", action="store_const", const=True)
    parser.add_argument("--log-dir")

    parser.add_argument("--history-length", type=int)
    parser.add_argument("--bridge-size", type=int)
    parser.add_argument("--train-size", type=int)
    parser.add_argument("--keep-short", action="store_const", const=True)
    parser.add_argument("--include-test-buys", action="store_const", const=True)

    parser.add_argument("--dim", type=int)
    parser.add_argument("--walks-per-node", type=int)
    parser.add_argument("--walk-length", type=int)
    parser.add_argument("--window", type=int)
    parser.add_argument("--walk-epochs", type=int)

    parser.add_argument("--k-paths", type=int)
    parser.add_argument("--schema-set", choices=["all", "ui", "uib", "uic"])
    parser.add_argument("--schema-file")
    parser.add_argument("--resample-paths", action="store_const", const=True)

    parser.add_argument("--heads", type=int)
    parser.add_argument("--n-neg", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--patience", type=int)
    parser.add_argument("--val-negatives", type=int)
    parser.add_argument("--ablation", choices=["full", "RUI", "RII"])
    parser.add_argument("--loss", choices=["standard", "paper-literal", "negative-only"])

    parser.add_argument("--n-negatives", type=int)
    parser.add_argument("--top-k", type=int)
    parser.add_argument("--explain-users", type=int)
    parser.add_argument("--workers", type=int)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one pipeline command.

    Returns:
        0 on success, 2 on a pipeline contract violation, 1 on anything else
    """
    args = build_parser().parse_args(argv)
    overrides = vars(args).copy()
    command = overrides.pop("command")
    config_file = overrides.pop("config")
    log_dir = overrides.pop("log_dir")

    debug = bool(args.debug) or os.getenv('TMER_DEBUG', 'false').lower() == 'true'
    log_filepath = setup_logging(debug, log_dir)
    logger.info(f"Running '{command}', logging to {log_filepath}")

    try:
        cfg, sources = load_config(overrides, config_file)
        log_config(cfg, sources, command)
        STAGE_FUNCTIONS[command](cfg)
    except TMERError as e:
        logger.error(f"{command} failed: {e}")
        return EXIT_CONTRACT
    except Exception as e:
        logger.exception(f"{command} failed unexpectedly: {e}")
        return EXIT_UNEXPECTED
    logger.info(f"'{command}' finished")
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
