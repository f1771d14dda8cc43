#pragma once

// Umbrella header for the multi-behavior alignment library.

#include "mba/align.hpp"
#include "mba/core.hpp"
#include "mba/dataio.hpp"
#include "mba/eval.hpp"
#include "mba/math.hpp"
#include "mba/model.hpp"
#include "mba/pretrain.hpp"
#include "mba/rng.hpp"
#include "mba/synth.hpp"
