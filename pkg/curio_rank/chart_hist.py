import altair as alt
import pandas as pd


def configure_bar(frame, x_title, y_title, bin_width, bar_color, tooltip_config):
    """Returns a bar chart object over pre-binned data (bin_start, bin_end, count).

    Parameters:
        frame (pd.DataFrame): binned data from < frame.bin_data() >
        x_title (str): title for the x-axis
        y_title (str): title for the y-axis
        bin_width (float): width of the bins
        bar_color (str): bar color
        tooltip_config (list): nested dictionaries containing tooltip config values

    Returns:
        alt.Chart: bar chart object
    """

    return (
        alt.Chart(frame)
        .mark_bar(binSpacing=0, color=bar_color, opacity=1)
        .encode(
            x=configure_x_axis("bin_start:Q", x_title, bin_width),
            x2="bin_end:Q",
            y=configure_y_axis("count:Q", y_title),
            tooltip=configure_tooltip(tooltip_config),
        )
    )


def configure_line(frame, x_shorthand, color, dash=None):
    """Returns a vertical rule for every row of < frame >.

    Parameters:
        frame (pd.DataFrame): DataFrame with the rule positions
        x_shorthand (str): shorthand value for the x position
        color (str): line color
        dash (list): stroke dash pattern

    Returns:
        alt.Chart: rule chart
    """

    return alt.Chart(frame).mark_rule(color=color, strokeDash=dash or []).encode(x=x_shorthand)


def configure_mu_line(line_title, mu, color):
    return configure_line(pd.DataFrame({line_title: [mu]}), f"{line_title}:Q", color)


def configure_sigma_lines(line_title, mu, sigma, color, n=1, lower=0.0, upper=1.0):
    """Returns the mu ± n sigma rules that fall inside [lower, upper].

    Parameters:
        line_title (str): field name for the rule positions
        mu (float): mean value
        sigma (float): standard deviation value
        color (str): line color
        n (int): the sigma level (e.g., 1-sigma, 2-sigma)
        lower (float): axis minimum
        upper (float): axis maximum

    Returns:
        alt.Chart: sigma rule chart
    """

    positions = [p for p in (mu - n * sigma, mu + n * sigma) if lower <= p <= upper]

    return configure_line(
        pd.DataFrame({line_title: positions}), f"{line_title}:Q", color, dash=[4, 2 * n]
    )


def configure_tooltip(config):
    """Returns tooltip objects from dictionaries with shorthand, title and format keys."""

    return [
        (
            alt.Tooltip(dict_["shorthand"], title=dict_["title"], format=dict_["format"])
            if dict_["format"]
            else alt.Tooltip(dict_["shorthand"], title=dict_["title"])
        )
        for dict_ in config
    ]


def configure_x_axis(shorthand, title, bin_width, lower=0.0, upper=1.0):
    """Returns an alt.X object spanning [lower, upper] with one tick per bin edge.

    Parameters:
        shorthand (str): shorthand value for the x-axis
        title (str): x-axis title
        bin_width (float): width of the bins
        lower (float): axis minimum
        upper (float): axis maximum

    Returns:
        alt.X: x-axis object
    """

    ticks = int(round((upper - lower) / bin_width))

    return alt.X(
        shorthand=shorthand,
        axis=alt.Axis(
            format=".1f",
            labelAngle=0,
            labelFontWeight="normal",
            labelPadding=5,
            tickCount=ticks,
            title=title,
            titleFontSize=10,
            titleFontWeight="bold",
            values=[round(lower + k * bin_width, 10) for k in range(ticks + 1)],
        ),
        scale=alt.Scale(domain=[lower, upper]),
    )


def configure_y_axis(shorthand, title):
    return alt.Y(
        shorthand=shorthand,
        axis=alt.Axis(
            grid=True,
            labelAngle=0,
            labelFontWeight="normal",
            labelPadding=5,
            title=title,
            titleFontSize=10,
            titleFontWeight="bold",
        ),
    )


def create_histogram(
    frame,
    x_title,
    y_title,
    mu,
    sigma,
    bin_width,
    bar_color,
    mu_color,
    sigma_color,
    title,
    padding=15,
    height=240,
    width=240,
):
    """Creates a curiosity histogram with mu and sigma lines. Data must be pre-binned (see
    < frame.create_bins() > and < frame.bin_data() >) before passing it to this function.

    Parameters:
        frame (pd.DataFrame): binned data
        x_title (str): title for the x-axis
        y_title (str): title for the y-axis
        mu (float): mean value
        sigma (float): standard deviation value
        bin_width (float): width of the bins
        bar_color (str): color for the bars
        mu_color (str): color for the mu line
        sigma_color (str): color for the sigma lines
        title (str|dict): chart title
        padding (int): chart padding
        height (int): chart height
        width (int): chart width

    Returns:
        alt.LayerChart: histogram with mu and sigma lines
    """

    tooltip_config = [
        {"shorthand": "bin_start:Q", "title": "from", "format": ".1f"},
        {"shorthand": "bin_end:Q", "title": "to", "format": ".1f"},
        {"shorthand": "count:Q", "title": "users", "format": ","},
    ]
    bar = configure_bar(frame, x_title, y_title, bin_width, bar_color, tooltip_config)

    # mu (μ) and sigma (σ) lines (μ ± σ, μ ± 2σ)
    mu_line = configure_mu_line(x_title, mu, mu_color)
    sigma_lines = configure_sigma_lines(x_title, mu, sigma, sigma_color)
    two_sigma_lines = configure_sigma_lines(x_title, mu, sigma, sigma_color, 2)

    return alt.layer(bar, mu_line, sigma_lines, two_sigma_lines).properties(
        title=title, padding=padding, height=height, width=width
    )
