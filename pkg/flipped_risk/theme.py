"""A container for style information, used by `console.RiskConsole`."""
from typing import Dict, Mapping, Optional

from rich.style import Style, StyleType
from rich.table import Table
from rich.theme import Theme

from flipped_risk.default_styles import RISK_STYLES, styles_table


class RiskTheme(Theme):
    """A container for style information used by `flipped_risk.console.RiskConsole`.

    Args:
        styles (Dict[str, Style], optional): A mapping of style names on to \
            styles. Defaults to None for the package styles only.
        inherit (bool, optional): Inherit rich's default styles. Defaults to True.
    """

    styles: Dict[str, Style]

    def __init__(
        self, styles: Optional[Mapping[str, StyleType]] = None, inherit: bool = True
    ) -> None:
        merged: Dict[str, StyleType] = dict(RISK_STYLES)
        if styles is not None:
            merged.update(styles)
        super().__init__(styles=merged, inherit=inherit)

    def __repr__(self) -> str:
        return f"RiskTheme({len(self.styles)} styles)"

    def __rich__(self) -> Table:
        return styles_table()

    def __getitem__(self, name: str) -> Style:
        return self.styles[name]
