"""Desk-scale neural-network compression with energy accounting.

Three compression pipelines over a small numpy training stack:

  stego    - clear low-order bits of every float32 weight, measure how many
             bits can go before accuracy drops, store only the rest
  prune    - global unstructured L1 magnitude pruning with a stepped rate
             search and mask-preserving retraining
  lowrank  - per-layer SVD rank search, factorized assembly, dynamic rank
             re-adjustment, and factor retraining

plus power sampling and trapezoidal energy integration (IT kWh and
PUE-scaled facility kWh) around every training session.
"""

from .datasets import Dataset, ingest_dataset, make_synthetic_dataset, write_synthetic_idx
from .energy import (ConstantSampler, EnergyLedger, EnergyReport, PowerMonitor,
                     PowerSample, ProcessProxySampler, TraceSampler, integrate,
                     mark_epoch)
from .experiment import (ExperimentConfig, ExperimentRecord, emit_report,
                         load_records, run_experiment)
from .linalg import FactorPair, SvdResult, frobenius_norm, matmul, svd, truncate
from .lowrank import (RankPlan, RankPlanEntry, assemble_factorized,
                      build_rank_plan, dynamic_rank_adjust, factorize_layer,
                      layer_rank_search, plan_report, retrain_factorized)
from .model import (Layer, Model, build_cnn, build_mlp, forward, loss_and_grads,
                    model_astype, model_inputs)
from .modelio import FormatError, load_model, save_model
from .pruning import (PruneOutcome, apply_prune, prune_search,
                      rank_weights_global, retrain_pruned)
from .stego import (StegoOutcome, apply_bitmask, capacity_search, overwrite_bits,
                    pack_quantized, retrain_quantized, stego_compression_rate,
                    unpack_quantized)
from .training import (EarlyStopper, TrainConfig, TrainOutcome, evaluate,
                       sgd_step, train)

__version__ = "0.1.0"
