"""
# Charts module for the repair toolkit
# Plotly figures for responsibility scores, swarm convergence and sweep results
"""

from typing import Dict, List, Optional, Sequence

import pandas as pd
import plotly.express as px
import plotly.graph_objects as go

from src.localizer import ResponsibilityMatrix


def _title(text: str) -> Dict:
    return {
        'text': text,
        'y': 0.95,
        'x': 0.5,
        'xanchor': 'center',
        'yanchor': 'top',
    }


def plot_responsibility(matrix: ResponsibilityMatrix, title: str = 'Neuron Responsibility') -> go.Figure:
    """
    Heatmap of responsibility scores, one row per layer.

    Layers narrower than the widest one are padded with gaps.
    """
    width = max(matrix.layer_sizes)
    z = [list(row) + [None] * (width - len(row)) for row in matrix.rows]
    fig = go.Figure(data=go.Heatmap(
        z=z,
        x=list(range(width)),
        y=[f'L{i}' for i in range(1, matrix.num_layers + 1)],
        colorscale='Reds',
        colorbar={'title': 'Score'},
        hoverongaps=False,
    ))
    fig.update_layout(
        xaxis_title='Neuron',
        yaxis_title='Layer',
        yaxis_autorange='reversed',
        title=_title(title),
    )
    return fig


def plot_swarm_history(history: List[Dict[str, float]], title: str = 'Swarm Convergence') -> go.Figure:
    """
    Best and mean fitness per swarm iteration.
    """
    df = pd.DataFrame(history)
    fig = px.line(
        df,
        x='iteration',
        y=[c for c in ('best_fitness', 'mean_fitness') if c in df.columns],
        labels={'value': 'Fitness', 'iteration': 'Iteration', 'variable': ''},
        markers=True,
    )
    fig.update_layout(title=_title(title), legend={'orientation': 'h', 'y': -0.2})
    return fig


def plot_training_history(history: List[Dict[str, float]], title: str = 'Retraining Progress') -> go.Figure:
    """Improvement and drawdown per retraining epoch."""
    df = pd.DataFrame(history)
    fig = px.line(df, x='epoch', y=['improvement', 'drawdown'],
                  labels={'value': 'Share', 'epoch': 'Epoch', 'variable': ''}, markers=True)
    fig.update_layout(title=_title(title), yaxis_range=[0, 1.05])
    return fig


def plot_sweep(df: pd.DataFrame, x: str, ys: Sequence[str] = ('improvement', 'drawdown'),
               title: Optional[str] = None) -> go.Figure:
    """
    Line chart of sweep results against the swept parameter.
    """
    fig = px.line(
        df,
        x=x,
        y=list(ys),
        labels={'value': 'Share', 'variable': ''},
        markers=True,
    )
    fig.update_layout(
        title=_title(title or f'Sweep over {x}'),
        yaxis_range=[0, 1.05],
    )
    return fig


def save_figure(fig: go.Figure, path: str) -> None:
    fig.write_html(path, include_plotlyjs='cdn')
