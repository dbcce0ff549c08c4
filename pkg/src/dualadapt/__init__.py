"""Dual-adapter parameter-efficient multimodal tracking at desk scale."""
from .backbone import Backbone, BackboneConfig, TokenLayout
from .evaluate import EvalReport, evaluate
from .head import BBox, HeadMaps, decode_bbox, giou, total_loss
from .memory import TemplateMemory, assemble_memory, plan_indices, uniform_interval_indices
from .model import Batch, Model, ModelConfig, ParamAudit, assemble_model, freeze_partition, param_audit
from .params import FreezePolicyError, ParamStore
from .synth import SynthConfig, SyntheticSequence, generate_sequence
from .tensor import NonFiniteError, ShapeError, Tensor, no_grad
from .tracker import track, track_sequence
from .train import AdamWState, adamw_update, lr_at, train_step

__version__ = "0.1.0"
