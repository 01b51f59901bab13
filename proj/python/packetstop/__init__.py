"""Utility-aware progressive stopping for packetized image transmission."""

from ._core import (
    ContractViolation,
    Image,
    IoError,
    ParseError,
    SchemaError,
    SpecError,
    arrival_order,
    compute_utility_map,
    config_hash,
    crc32,
    decode_data_frame,
    decode_stop_frame,
    detect,
    encode_data_frame,
    encode_stop_frame,
    generate_scene,
    load_raster,
    run_experiment,
    save_raster,
    simulate,
)

__all__ = [
    "ContractViolation",
    "Image",
    "IoError",
    "ParseError",
    "SchemaError",
    "SpecError",
    "arrival_order",
    "compute_utility_map",
    "config_hash",
    "crc32",
    "decode_data_frame",
    "decode_stop_frame",
    "detect",
    "encode_data_frame",
    "encode_stop_frame",
    "generate_scene",
    "load_raster",
    "run_experiment",
    "save_raster",
    "simulate",
]
