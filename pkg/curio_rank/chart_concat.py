from enum import Enum
import logging

import altair as alt

logger = logging.getLogger(__name__)


class Orient(Enum):
    VERTICAL = 0
    HORIZONTAL = 1


def concat_charts(charts, orient=Orient.HORIZONTAL, columns=3, spacing=10, title=""):
    """Concatenates multiple charts into a single chart. Horizontal concatenation wraps after
    < columns > charts.

    Parameters:
        charts (list): list of altair.Chart objects
        orient (Orient): concatenated charts orientation (vertical or horizontal)
        columns (int): number of columns
        spacing (int): spacing between charts
        title (str|alt.TitleParams): chart title

    Returns:
        alt.ConcatChart|alt.VConcatChart: concatenated chart
    """

    logger.debug("concatenating %d charts (%s)", len(charts), orient.name.lower())

    if orient == Orient.VERTICAL:
        return alt.vconcat(*charts, spacing=spacing, title=title)

    return alt.concat(*charts, columns=columns, spacing=spacing, title=title)
