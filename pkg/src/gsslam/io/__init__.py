"""Dataset ingestion and export of maps, trajectories and images."""
from .datasets import (SequenceSource, associate, load_simple, load_tum, write_simple)
from .ply import export_map_ply, import_map_ply
from .synth import (Motion, SynthError, SyntheticScene, add_depth_holes, synth_generate,
                    synth_render_sequence)
from .trajectory import FormatError, export_trajectory_tum, load_trajectory_tum

__all__ = [
    "FormatError", "Motion", "SequenceSource", "SynthError", "SyntheticScene", "add_depth_holes",
    "associate", "export_map_ply", "export_trajectory_tum", "import_map_ply", "load_simple",
    "load_trajectory_tum", "load_tum", "synth_generate", "synth_render_sequence", "write_simple",
]
