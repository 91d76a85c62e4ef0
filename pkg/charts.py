import math
from typing import Optional

import pandas as pd
import plotly.express as px
import plotly.graph_objects as go


def create_privacy_profile_chart(profile: pd.DataFrame, target_delta: Optional[float] = None) -> go.Figure:
    """Plot delta-slack against epsilon (a privacy_profile table)"""
    if profile.empty:
        fig = go.Figure()
        fig.add_annotation(
            text="Empty privacy profile",
            xref="paper", yref="paper",
            x=0.5, y=0.5, xanchor='center', yanchor='middle',
            showarrow=False, font=dict(size=16)
        )
        return fig

    fig = px.line(profile, x="epsilon", y="delta", markers=True, title="Privacy profile")
    if target_delta is not None:
        fig.add_hline(y=target_delta, line_dash="dash", line_color="red",
                      annotation_text=f"target δ = {target_delta:g}")
    fig.update_layout(
        xaxis_title="ε",
        yaxis_title="minimal δ",
        yaxis=dict(range=[0, 1.05]),
        height=400,
        margin=dict(l=20, r=20, t=40, b=20)
    )
    return fig


def create_error_bound_chart(curve: pd.DataFrame) -> go.Figure:
    """Plot both lower bounds and the randomized-response error over epsilon (a bound_curve table)"""
    fig = go.Figure()
    styles = {
        'bound_general': dict(name="general bound", line=dict(dash="dot", color="#FFA500")),
        'bound_finite': dict(name="finite-space bound", line=dict(dash="dash", color="#FF4444")),
        'rr_error': dict(name="randomized response", line=dict(color="darkblue")),
    }
    for column, style in styles.items():
        if column in curve:
            fig.add_trace(go.Scatter(x=curve["epsilon"], y=curve[column], mode="lines+markers", **style))

    top = curve.drop(columns=["epsilon"]).to_numpy().max() if not curve.empty else 1.0
    fig.update_layout(
        title="Maximal expected error vs lower bounds",
        xaxis_title="ε",
        yaxis_title="expected error",
        yaxis=dict(range=[0, top * 1.1 if math.isfinite(top) and top > 0 else 1.0]),
        height=400,
        hovermode='x unified'
    )
    return fig
