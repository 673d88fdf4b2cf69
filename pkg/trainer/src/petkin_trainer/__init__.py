"""Physics-informed CycleGAN trainer for dynamic PET quantification.

Learns a generator from dynamic volumes to kinetic parameter maps plus a
per-scan AIF using unpaired data, an adversarial loss on the maps, and a
cycle-consistency loss through a differentiable compartment-model forward
operator. Consumes and produces only the engine's on-disk formats.
"""

__version__ = "0.1.0"

from .data import PhantomSamples
from .infer import infer, load_checkpoint
from .model import DiscriminatorConfig, Generator, GeneratorConfig, PatchDiscriminator
from .parity import forward_parity
from .physics import ForwardOperator
from .train import TrainConfig, train
