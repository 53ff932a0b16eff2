"""Rotation-free two-party CNN inference over a CKKS-style ring."""

from .ckks import Ciphertext, HalfCiphertext, PublicKey, SecretKey, decrypt, encrypt, encrypt_c0_only, keygen
from .conv_pack import ConvShape, SlotMap
from .cost_model import CostCounters, SchemeId, conv_cost, fc_cost, reconcile, relu_bandwidth
from .errors import (EncodingError, FrameError, HEError, ParameterError, ProtocolError,
                     ReconciliationError, StateError)
from .fc_pack import FcShape, plan_tiles
from .ring import Poly, RingParams

__version__ = "0.1.0"
