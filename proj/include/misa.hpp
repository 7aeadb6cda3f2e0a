#pragma once

// Umbrella header.

#include "misa/tensor.hpp"
#include "misa/grad_check.hpp"
#include "misa/config.hpp"
#include "misa/io.hpp"
#include "misa/data.hpp"
#include "misa/encoders.hpp"
#include "misa/fusion.hpp"
#include "misa/losses.hpp"
#include "misa/model.hpp"
#include "misa/metrics.hpp"
#include "misa/checkpoint.hpp"
#include "misa/training.hpp"
#include "misa/run_config.hpp"
#include "misa/cli.hpp"
