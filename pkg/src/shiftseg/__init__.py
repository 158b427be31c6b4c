"""Unsupervised object segmentation by layered-scene generation under random
foreground shifts, with encoder-based inversion for segmenting images."""

from .compose import LayeredScene, Shift, compose, compose_shifted, sample_shift, translate
from .data import DatasetRecord, SynthParams, build_synth_dataset, synth_scene
from .losses import LossWeights
from .nets import Discriminator, Encoder, GeneratorPair, sample_latent
from .train import EncoderTrainConfig, TrainConfig, train_encoder, train_gan
from .evaluation import SegmentationReport, binarize_mask, iou, segment_images

__version__ = "0.1.0"
