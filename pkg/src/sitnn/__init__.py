"""Standardized Izhikevich tonic neurons: phase-plane analysis, spiking
dynamics, and a surrogate-gradient training engine for hybrid networks."""

__version__ = "0.1.0"

from .neurons import (NeuronParams, NeuronState, StepTrace, SpikeTrain,
                      lif_step, qif_step, sit_step, izhikevich_vanilla_step,
                      step, surrogate, simulate_constant_input,
                      write_spike_train_csv)
from .phaseplane import (FixedPoint, PhasePortrait, Rheobase, classify_fixed_point,
                         fixed_points, nullclines, rheobase, stable_origin_b,
                         vector_field)
from .network import (LayerSpec, Network, build_network, format_architecture,
                      mse_rate_loss, parse_architecture, spiking_dropout_mask,
                      voting_decode)
from .data import (EventStream, ImageSet, events_to_frames,
                   firing_rate_featuremap, input_distribution_stats,
                   load_image_set, rate_encode, read_events_text, read_idx,
                   repeat_frames, synthetic_digits, write_events_text,
                   write_idx_images, write_idx_labels)
from .training import (AdamState, RunReport, TrainConfig, adam_update,
                       cosine_lr, evaluate, gradient_check, load_checkpoint,
                       load_config, moving_average, save_checkpoint,
                       sit_location_sweep, train)

__all__ = [name for name in dir() if not name.startswith("_")]
