def format_title(
    frame,
    title_text,
    threshold=0.5,
    multiline=True,
    anchor="middle",
    font_size=14,
    subtitle_font_size=12,
):
    """Returns a formatted title for a curiosity chart with a summary subtitle.

    Parameters:
        frame (pd.DataFrame): curiosity profiles with a "curiosity" column
        title_text (str): title of the chart
        threshold (float): curiosity below this value counts as low
        multiline (bool): whether the title should be split into multiple lines
        anchor (str): anchor position
        font_size (int): font size
        subtitle_font_size (int): subtitle font size

    Returns:
        dict: Vega-Lite title parameters
    """

    users = len(frame)
    low = int((frame["curiosity"] < threshold).sum())
    low_pct = round(low / users * 100, 2) if users else 0.0
    mean = frame["curiosity"].mean() if users else float("nan")

    return {
        "text": title_text.split("\n") if multiline else title_text,
        "subtitle": (
            f"users: {users:,}; "
            f"curiosity < {threshold}: {low:,} ({low_pct}%) | "
            f"mean curiosity: {mean:.4f}"
        ),
        "anchor": anchor,
        "fontSize": font_size,
        "subtitleFontSize": subtitle_font_size,
    }
