#pragma once

// Umbrella header for the whole library.

#include "bnn/attribution.hpp"
#include "bnn/bayes.hpp"
#include "bnn/checkpoint.hpp"
#include "bnn/config.hpp"
#include "bnn/data.hpp"
#include "bnn/errors.hpp"
#include "bnn/nn.hpp"
#include "bnn/parallel.hpp"
#include "bnn/rng.hpp"
#include "bnn/selective.hpp"
#include "bnn/smoothing.hpp"
#include "bnn/tensor.hpp"
#include "bnn/train.hpp"
