#pragma once

#include "adk/autodiff.hpp"
#include "adk/checkpoint.hpp"
#include "adk/config.hpp"
#include "adk/data.hpp"
#include "adk/error.hpp"
#include "adk/image_io.hpp"
#include "adk/metrics.hpp"
#include "adk/model.hpp"
#include "adk/ops.hpp"
#include "adk/optim.hpp"
#include "adk/resample.hpp"
#include "adk/rng.hpp"
#include "adk/tensor.hpp"
#include "adk/trainer.hpp"
