"""Temporal knowledge graph forecasting via recurrent graph-convolutional
embedding evolution."""

__version__ = "0.1.0"

from .data import (DataError, FactStore, Quadruple, Snapshot, StaticGraph,
                   add_inverse_quadruples, build_static_graph, history_window,
                   load_directory, load_quadruples, store_from_facts)
from .decoder import (convtranse_core, score_entities, score_entities_batch,
                      score_relations, score_relations_batch)
from .evaluation import MetricReport, compute_metrics, evaluate, rank_query
from .evolution import (EvolutionState, evolve, gru_update, relation_input,
                        rgcn_layer, static_constraint_loss, static_embeddings,
                        time_gate_update)
from .model import (DecoderParams, EvolutionParams, GRUParams, ParameterSet,
                    init_decoder, init_parameters)
from .tensor import (GradientError, ShapeError, Tape, Tensor, backward,
                     as_tensor)
from .training import (AdamState, EpochStats, FitResult, NumericError,
                       TrainConfig, adam_step, compute_final_state, entity_loss,
                       fit, load_checkpoint, relation_loss, save_checkpoint,
                       total_loss, train_epoch)

__all__ = [name for name in dir() if not name.startswith("_")]
