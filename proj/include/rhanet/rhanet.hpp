#pragma once

// Umbrella header for the crack-segmentation toolkit.

#include "rhanet/tensor.hpp"
#include "rhanet/ops.hpp"
#include "rhanet/blocks.hpp"
#include "rhanet/model.hpp"
#include "rhanet/loss.hpp"
#include "rhanet/optim.hpp"
#include "rhanet/checkpoint.hpp"
#include "rhanet/image_io.hpp"
#include "rhanet/dataset.hpp"
#include "rhanet/metrics.hpp"
#include "rhanet/trainer.hpp"
