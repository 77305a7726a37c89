import altair as alt


def create_scatter(frame, title, scheme="viridis", height=240, width=240):
    """Plots each user's preference difference against short-term diversity, coloured by the
    resulting curiosity.

    Parameters:
        frame (pd.DataFrame): curiosity profiles (user_id, diff_norm, div, curiosity)
        title (str|dict): chart title
        scheme (str): Vega color scheme for curiosity
        height (int): chart height
        width (int): chart width

    Returns:
        alt.Chart: scatter plot
    """

    unit = alt.Scale(domain=[0, 1])

    return (
        alt.Chart(frame)
        .mark_circle(opacity=0.7, size=18)
        .encode(
            x=alt.X("diff_norm:Q", title="Preference difference", scale=unit),
            y=alt.Y("div:Q", title="Short-term diversity", scale=unit),
            color=alt.Color(
                "curiosity:Q", title="Curiosity", scale=alt.Scale(scheme=scheme, domain=[0, 1])
            ),
            tooltip=[
                alt.Tooltip("user_id:Q", title="user"),
                alt.Tooltip("diff_norm:Q", title="diff", format=".4f"),
                alt.Tooltip("div:Q", title="div", format=".4f"),
                alt.Tooltip("curiosity:Q", title="curiosity", format=".4f"),
            ],
        )
        .properties(title=title, height=height, width=width)
    )
