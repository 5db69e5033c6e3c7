"""RiskConsole is a custom themed class inheriting from rich.console.Console."""
# pylint: disable=invalid-name
from typing import IO, Dict, Optional

from rich.console import Console
from rich.highlighter import ReprHighlighter
from rich.traceback import install as install_traceback

from flipped_risk.theme import RiskTheme


class Singleton(type):
    """A metaclass to create a single global RiskConsole instance."""

    _instances: Dict[type, object] = {}

    def __call__(cls, *args, **kwargs):
        if cls not in cls._instances:
            cls._instances[cls] = super(Singleton, cls).__call__(*args, **kwargs)
        return cls._instances[cls]


class RiskConsole(Console, metaclass=Singleton):
    """Themed console shared by the CLI and the log sink; there is one per process.

    Only the options the commands use are exposed. `record=True` keeps output for
    `save_svg`/`save_text`; `traceback=False` leaves `sys.excepthook` alone.
    """

    def __init__(
        self,
        *,
        stderr: bool = False,
        file: Optional[IO[str]] = None,
        quiet: bool = False,
        width: Optional[int] = None,
        record: bool = False,
        traceback: bool = True,
    ) -> None:
        super().__init__(
            theme=RiskTheme(),
            highlighter=ReprHighlighter(),
            stderr=stderr,
            file=file,
            quiet=quiet,
            width=width,
            record=record,
        )
        if traceback:
            install_traceback(console=self)

    def __repr__(self) -> str:
        return f"<RiskConsole width={self.width} {self._color_system!s}>"
