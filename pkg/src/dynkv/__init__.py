"""dynkv: layer-adaptive KV-cache compression, fixed-pattern baselines and a
deterministic toy-transformer evaluation harness."""

from .kernels import pool1d_max, softmax_rows, top_k_indices
from .model import KVState, Model, ModelConfig, decode_step, init_deterministic, prefill
from .trace import (AttentionTrace, TraceError, read_trace, read_trace_file,
                    synth_trace, trace_from_window_attention, write_trace,
                    write_trace_file)
from .policies import (PolicyConfig, RetentionPlan, apply_plan, h2o_select,
                       identity_plan, make_plan, pyramid_budgets,
                       pyramid_select, snapkv_select, streaming_select)
from .allocator import (CompressionResult, buffer_cap, budget_report,
                        layer_buffer, run_prefill_compression,
                        update_buffer_length)
from .harness import (EvalReport, compare_run, compression_ratio, layer_profile,
                      logit_fidelity, memory_bytes, needle_retention,
                      profile_csv, reports_csv, reports_json)

__version__ = "0.1.0"
