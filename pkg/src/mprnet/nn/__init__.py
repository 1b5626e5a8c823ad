from .blocks import CAB, CSFF, ORB, SAM, BridgeOutput, EncoderDecoder, EncoderDecoderOutput, ImageHead, ORSNet
from .module import Activation, Conv2d, Initializer, Module, ModuleList, Sequential

__all__ = [
    "Activation",
    "BridgeOutput",
    "CAB",
    "CSFF",
    "Conv2d",
    "EncoderDecoder",
    "EncoderDecoderOutput",
    "ImageHead",
    "Initializer",
    "Module",
    "ModuleList",
    "ORB",
    "ORSNet",
    "SAM",
    "Sequential",
]
