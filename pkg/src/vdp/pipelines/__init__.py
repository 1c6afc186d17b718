from vdp.pipelines.airlight import AirlightMap, estimate_airlight, load_airlight
from vdp.pipelines.compose import compose_layers, dehaze_reconstruct, relight_reconstruct
from vdp.pipelines.config import ConfigError, TaskConfig
from vdp.pipelines.run import TaskResult, extract_masks, run_task, write_result, write_trace

__all__ = [
    "AirlightMap",
    "ConfigError",
    "TaskConfig",
    "TaskResult",
    "compose_layers",
    "dehaze_reconstruct",
    "estimate_airlight",
    "extract_masks",
    "load_airlight",
    "relight_reconstruct",
    "run_task",
    "write_result",
    "write_trace",
]
