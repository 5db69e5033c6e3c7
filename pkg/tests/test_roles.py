import pytest
from rich.console import Console

from flipped_risk._roles import AucBand, ColumnKind, ColumnRole, Partition
from flipped_risk.default_styles import RISK_STYLES
from flipped_risk.theme import RiskTheme


def test_parse_is_case_and_space_insensitive():
    assert ColumnRole.parse("  Irrelevant ") is ColumnRole.IRRELEVANT
    assert ColumnKind.parse("enhancement-points") is ColumnKind.ENHANCEMENT_POINTS
    assert Partition.parse(Partition.TEST) is Partition.TEST


def test_parse_rejects_unknown_label():
    with pytest.raises(ValueError, match="expected one of"):
        ColumnRole.parse("protected")


def test_members_compare_equal_to_their_label():
    assert ColumnRole.OUTCOME == "outcome"
    assert str(ColumnKind.NUMERIC) == "numeric"
    assert ColumnKind.ENHANCEMENT_POINTS.is_numeric
    assert not ColumnKind.CATEGORICAL.is_numeric


@pytest.mark.parametrize(
    "value, band",
    [
        (0.50, AucBand.POOR),
        (0.544, AucBand.POOR),
        (0.546, AucBand.FAIR),
        (0.55, AucBand.FAIR),
        (0.63, AucBand.FAIR),
        (0.64, AucBand.GOOD),
        (0.70, AucBand.GOOD),
        (0.71, AucBand.EXCELLENT),
        (0.93, AucBand.EXCELLENT),
    ],
)
def test_auc_band_thresholds_after_rounding(value, band):
    assert AucBand.of(value) is band


def test_every_band_has_a_theme_style():
    theme = RiskTheme()
    for band in AucBand:
        assert f"band.{band.value}" in RISK_STYLES
        assert theme[f"band.{band.value}"] is not None


def test_band_renders_with_its_style():
    console = Console(theme=RiskTheme(), record=True, width=40)
    console.print(AucBand.GOOD)
    assert "good" in console.export_text()


def test_theme_accepts_extra_styles():
    theme = RiskTheme({"custom": "bold red"})
    assert "custom" in theme.styles
    assert "value" in theme.styles
