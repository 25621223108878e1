#pragma once

#include "baselines.hpp"
#include "errors.hpp"
#include "field_data.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "simulators.hpp"
#include "spectral.hpp"
#include "training.hpp"
