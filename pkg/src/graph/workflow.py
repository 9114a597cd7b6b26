"""Graph construction for the ablation workflow."""

from langgraph.checkpoint.memory import MemorySaver
from langgraph.graph import END, START, StateGraph

from graph.nodes import fan_out_cells, load_grids_node, run_cell_node, save_tables_node
from graph.state import AblationState


def build_ablation_graph(checkpointer=None):
    """Build the ablation graph.

    Cells fan out from `load_grids` as parallel `run_cell` branches and are
    gathered by `save_tables`.

    Args:
        checkpointer: Optional checkpointer for persistence.
                     Defaults to MemorySaver if not provided.

    Returns:
        Compiled graph ready for invocation.
    """
    builder = StateGraph(AblationState)

    builder.add_node("load_grids", load_grids_node)
    builder.add_node("run_cell", run_cell_node)
    builder.add_node("save_tables", save_tables_node)

    builder.add_edge(START, "load_grids")
    builder.add_conditional_edges(
        "load_grids", fan_out_cells, ["run_cell", "save_tables"]
    )
    builder.add_edge("run_cell", "save_tables")
    builder.add_edge("save_tables", END)

    return builder.compile(checkpointer=checkpointer or MemorySaver())
