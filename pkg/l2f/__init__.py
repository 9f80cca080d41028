from l2f.exceptions import L2FException
from l2f.meta import MetaConfig, MetaLearner, attenuate, inner_adapt, meta_loss
from l2f.models import Attenuator, LayeredParams, TaskNetwork, init_attenuator, init_task_network
from l2f.tasks import DistributionSpec, TaskSampler, eval_protocol, sample_classification, sample_sinusoid

__version__ = '0.1.0'
