#pragma once

#include "sepcross/averaged.hpp"
#include "sepcross/ensemble.hpp"
#include "sepcross/errors.hpp"
#include "sepcross/geometry/level_orbit.hpp"
#include "sepcross/geometry/saddle.hpp"
#include "sepcross/geometry/separatrix.hpp"
#include "sepcross/hypotheses.hpp"
#include "sepcross/model.hpp"
#include "sepcross/normalize.hpp"
#include "sepcross/options.hpp"
#include "sepcross/perturbed.hpp"
#include "sepcross/presets.hpp"
#include "sepcross/rng.hpp"
#include "sepcross/slow_vector.hpp"
#include "sepcross/theta.hpp"
