"""Slice-level retrieval engine for volumetric image embeddings.

The pipeline: a corpus of per-slice embedding vectors is indexed at the
slice level; query slices pull their nearest neighbors; hits aggregate
into volume rankings; a late-interaction re-ranker and reciprocal-rank
fusion refine them; a seeded experiment harness scores everything with
precision/AP metrics and exact paired significance tests.
"""

__version__ = "0.1.0"

from .ann import (ExactIndex, HnswIndex, IndexConfig, SliceHit, SliceIndex,
                  build_index, exact_config, load_index, organ_slices_only,
                  save_index)
from .corpus import (Corpus, SliceKey, Task, TASKS, VolumeRecord,
                     default_metadata_path, load_embeddings, normalize_rows,
                     write_embeddings)
from .errors import (ConsistencyError, FormatError, QueryError, SamplingError,
                     ValidationError, VolsearchError)
from .experiments import (ExperimentPlan, MODES, materialize, read_plan,
                          round_half_up, sample_organ_agnostic,
                          sample_organ_specific, sweep_plans, write_plan)
from .harness import (EvaluationReport, HarnessConfig, MetricRow,
                      evaluate_experiment, run_plan, score_plan)
from .metrics import (WilcoxonResult, average_precision, flagging_relevant,
                      make_judge, precision_at_k, staging_relevant,
                      wilcoxon_signed_rank_two_sided)
from .rerank import (cmir_rerank, embedding_matrix, late_interaction_score,
                     rrf_fuse, similarity_matrix)
from .retrieval import (HitStats, METHODS, RankedList, build_hit_table,
                        rank_count_base, rank_max_score, rank_sum_sim)
from .synthetic import SyntheticSpec, desk_spec, generate_synthetic_corpus

__all__ = [name for name in dir() if not name.startswith("_")]
