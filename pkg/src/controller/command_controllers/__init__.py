from .TrainCommandController import TrainCommandController
from .AblationCommandController import AblationCommandController
from .ExecCommandController import ExecCommandController
from .GraphCommandController import GraphCommandController

__all__ = ["TrainCommandController", "AblationCommandController", "ExecCommandController", "GraphCommandController"]
