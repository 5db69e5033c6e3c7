"""A container for the default styles used by RiskConsole."""
# pylint: disable=redefined-outer-name,C0201
from typing import Mapping

from rich.console import Console
from rich.style import Style, StyleType
from rich.table import Table
from rich.text import Text

__all__ = ["RISK_STYLES", "styles_table"]

RISK_STYLES: Mapping[str, StyleType] = {
    "none": Style.null(),
    "dim": Style(dim=True),
    "bold": Style(bold=True),
    "italic": Style(italic=True),
    "bold.white": Style(color="#ffffff", bold=True),
    "bold.magenta": Style(color="#ff00ff", bold=True),
    "bold.purple": Style(color="#af00ff", bold=True),
    "bold.cyan": Style(color="#00ffff", bold=True),
    "bold.lime": Style(color="#00ff00", bold=True),
    "bold.orange": Style(color="#ff8800", bold=True),
    "bold.red": Style(color="#ff0000", bold=True),
    "table.title": Style(color="#ff8800", bold=True, italic=True),
    "table.header": Style(color="#af00ff", bold=True),
    "table.border": Style(color="#666666", bold=True),
    "value": Style(color="#00ffff", bold=True),
    "label": Style(color="#5f00ff", italic=True),
    "flag.on": Style(color="#ff8800", bold=True),
    "flag.off": Style(color="#888888"),
    "band.poor": Style(color="#ff0000", bold=True),
    "band.fair": Style(color="#ffff00", bold=True),
    "band.good": Style(color="#00ff00", bold=True),
    "band.excellent": Style(color="#00ffff", bold=True),
    "stage.one": Style(color="#0088ff", bold=True),
    "stage.two": Style(color="#ff00ff", bold=True),
    "log.debug": Style(color="#5f00ff"),
    "log.info": Style(color="#af00ff"),
    "log.rich": Style(color="#ff00ff", bold=True),
    "log.success": Style(color="#00ff00", bold=True),
    "log.warning": Style(color="#ff8800", bold=True),
    "log.error": Style(color="#ff0000", bold=True),
    "log.critical": Style(color="#ffffff", bgcolor="#ff0000", bold=True),
    "log.time": Style(color="#00ff00", bold=True),
    "log.file": Style(color="#ff00ff", bold=True),
    "log.line": Style(color="#00ffff", bold=True),
}


def styles_table() -> Table:
    """Generate a table listing every style with a sample."""
    table = Table(
        title="RiskTheme Styles",
        show_header=True,
        header_style="table.header",
        title_style="table.title",
    )
    table.add_column("Name", justify="right")
    table.add_column("Sample", justify="left")
    for name, style in RISK_STYLES.items():
        table.add_row(Text(name, style="label"), Text("flipped-risk", style=style))
    return table


if __name__ == "__main__":  # pragma: no cover
    console = Console()
    console.print(styles_table(), justify="center")
