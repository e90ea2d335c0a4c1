from .adam import get_optimizer, get_scheduler, learning_rate, optimizer_step, validate_train_config
from .checkpoint import Checkpoint, save_checkpoint, load_checkpoint, apply_checkpoint
from .torch_trainer import RayDataset, ModelTrainerLayered, HISTORY_COLUMNS, ray_loader, train
