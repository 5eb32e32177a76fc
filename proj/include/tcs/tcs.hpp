#pragma once

// Umbrella header.
#include "tcs/aggregation.hpp"
#include "tcs/checkpoint.hpp"
#include "tcs/config.hpp"
#include "tcs/correlation.hpp"
#include "tcs/features.hpp"
#include "tcs/gradcheck.hpp"
#include "tcs/image_io.hpp"
#include "tcs/metrics.hpp"
#include "tcs/model.hpp"
#include "tcs/ops.hpp"
#include "tcs/pfm.hpp"
#include "tcs/ply.hpp"
#include "tcs/scene.hpp"
#include "tcs/sequence.hpp"
#include "tcs/tensor.hpp"
#include "tcs/train.hpp"
#include "tcs/upsample.hpp"
