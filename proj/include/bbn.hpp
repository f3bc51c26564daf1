#pragma once

#include "bbn/analysis.hpp"
#include "bbn/baselines.hpp"
#include "bbn/bbn.hpp"
#include "bbn/data.hpp"
#include "bbn/nn.hpp"
#include "bbn/sampling.hpp"
#include "bbn/tensor.hpp"
#include "bbn/training.hpp"
