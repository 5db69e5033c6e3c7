"""Package logging on top of loguru, with a rich console sink."""
from __future__ import annotations

from datetime import datetime
from pathlib import Path
from typing import Optional

import loguru
from loguru import logger
from rich.table import Table
from rich.text import Text

from flipped_risk.console import RiskConsole

FORMAT = "{time:hh:mm:ss:SSS A} | {file.name: ^16} |  Line {line: ^5} | \
{level: ^8} | {message}"

_RICH_LEVEL = "RICH"
_CONSOLE_LEVELS = {"RICH", "SUCCESS", "WARNING", "ERROR", "CRITICAL"}


def get_console() -> RiskConsole:
    """Get the shared themed console."""
    return RiskConsole()


def _ensure_rich_level() -> None:
    try:
        logger.level(_RICH_LEVEL)
    except ValueError:
        logger.level(_RICH_LEVEL, no=24, icon="🌈")


_ensure_rich_level()


class Log:
    """Logging facade used throughout the package.

    Nothing is installed at import time; the CLI calls `configure` once per run.
    """

    def __init__(self) -> None:
        self.logger = logger.opt(depth=1)
        self._verbose = False

    def configure(self, log_dir: Optional[Path] = None, verbose: bool = False) -> None:
        """Install the file sinks under `log_dir` and the rich console sink.

        Args:
            log_dir (Path, optional): Directory for `debug.log` and `info.log`.
            verbose (bool): Also show INFO records on the console.
        """
        self._verbose = verbose
        handlers = [
            {
                "sink": self.rich_sink,
                "level": "INFO" if verbose else _RICH_LEVEL,
                "filter": self._rich_filter,
                "format": "{message}",
                "colorize": False,
                "diagnose": False,
                "catch": True,
                "backtrace": False,
            }
        ]
        if log_dir is not None:
            log_dir = Path(log_dir)
            log_dir.mkdir(parents=True, exist_ok=True)
            for name, level in (("debug.log", "DEBUG"), ("info.log", "INFO")):
                handlers.append(
                    {
                        "sink": log_dir / name,
                        "level": level,
                        "format": FORMAT,
                        "colorize": False,
                        "diagnose": True,
                        "backtrace": True,
                        "encoding": "utf-8",
                    }
                )
        logger.remove()
        logger.configure(handlers=handlers)

    def debug(self, msg: str) -> None:
        """Log to debug.log."""
        self.logger.debug(msg)

    def info(self, msg: str) -> None:
        """Log to info.log."""
        self.logger.info(msg)

    def rich(self, msg: str) -> None:
        """Log a step banner to the console and both log files."""
        self.logger.log(_RICH_LEVEL, msg)

    def success(self, msg: str) -> None:
        """Log a completed step to the console."""
        self.logger.success(msg)

    def warning(self, msg: str) -> None:
        """Log a warning."""
        self.logger.warning(msg)

    def error(self, msg: str) -> None:
        """Log an error."""
        self.logger.error(msg)

    def critical(self, msg: str) -> None:
        """Log a critical error."""
        self.logger.critical(msg)

    def _rich_filter(self, record: loguru.Record) -> bool:
        """Keep console records for the levels the console shows."""
        name = record["level"].name
        return name in _CONSOLE_LEVELS or (self._verbose and name == "INFO")

    @staticmethod
    def rich_sink(message: loguru.Message) -> None:
        """Render a record as a one-row table on the console."""
        record = message.record
        level_name = record["level"].name
        level_icon = record["level"].icon
        style = f"log.{level_name.lower()}"
        log_time: datetime = record["time"]
        time = Text(log_time.strftime("%H:%M:%S.%f")[:-3], style="log.time")
        file = Text(str(record["file"].name), style="log.file")
        line = Text(f"Line {int(record['line'])}", style="log.line")
        level = Text(f"{level_icon} {level_name}", style=style)
        msg = Text(str(record["message"]), style=style)

        log_table = Table(
            show_header=False,
            show_lines=False,
            show_edge=False,
            box=None,
            padding=(0, 1),
            expand=False,
        )
        for _ in range(5):
            log_table.add_column()
        log_table.add_row(time, file, line, level, msg)
        console = get_console()
        console.print(log_table, justify="left", width=int(console.width * 0.9))


log = Log()
