from .checkpoint import (
    CheckpointError,
    checkpoint_roundtrip,
    load_checkpoint,
    restore_model,
    restore_training_state,
    save_checkpoint,
)
from .config import (
    ConfigError,
    ExperimentConfig,
    TrainingConfig,
    config_from_dict,
    default_config_yaml,
    dump_config,
    load_config,
)
from .evaluation import dice_coefficient, evaluate
from .panels import emit_panels
from .training import (
    aggregate_report,
    render_table,
    run_experiment,
    train_one_seed,
)
