from .tensor import Parameter, Tensor, as_tensor, no_grad
from .ops import (
    add, avg_pool, concat, concat_channels, conv2d, conv3d, cross_entropy_loss, dense,
    global_avg_pool, global_depthwise_conv, mean_all, mul, relu, reshape, sigmoid,
    slice_axis, softmax, softmax_over_groups, split, sum_all, tanh,
)
from .optim import SGD, fan_in_uniform, sgd_step, zeros
from .gradcheck import GradcheckReport, gradcheck
from .checkpoint import load_checkpoint, save_checkpoint
