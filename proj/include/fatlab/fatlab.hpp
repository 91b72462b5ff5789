#pragma once

#include "fatlab/checkpoint.hpp"
#include "fatlab/config.hpp"
#include "fatlab/metrics_log.hpp"
#include "fatlab/plots.hpp"
#include "fatlab/training.hpp"
