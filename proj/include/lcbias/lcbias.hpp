#pragma once

// Everything except the command-line layer (lcbias/cli.hpp), which also
// needs nlohmann/json.

#include "lcbias/biasreduce.hpp"
#include "lcbias/core.hpp"
#include "lcbias/density1d.hpp"
#include "lcbias/diagnostics.hpp"
#include "lcbias/family.hpp"
#include "lcbias/functionals.hpp"
#include "lcbias/lowerbound.hpp"
#include "lcbias/mle.hpp"
#include "lcbias/model.hpp"
#include "lcbias/parallel.hpp"
#include "lcbias/potential.hpp"
#include "lcbias/quadrature.hpp"
#include "lcbias/random.hpp"
#include "lcbias/sampler.hpp"
