"""Differentiable actor/critic core: LSTM-MLP stacks with hand-written gradients."""
from . import kernels
from .network import (NumericError, PolicyOutput, Tape, actor_batch, backward, critic_batch,
                      forward_actor, forward_critic, forward_net, greedy_action, sample_action,
                      stack_observations)
from .params import (Architecture, CheckpointError, Gradients, ParameterSet,
                     deserialize_parameters, init_parameters, serialize_parameters)

__all__ = [
    "Architecture", "CheckpointError", "Gradients", "NumericError", "ParameterSet",
    "PolicyOutput", "Tape", "actor_batch", "backward", "critic_batch", "deserialize_parameters",
    "forward_actor", "forward_critic", "forward_net", "greedy_action", "init_parameters",
    "kernels", "sample_action", "serialize_parameters", "stack_observations",
]
