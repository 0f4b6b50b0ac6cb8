#pragma once

#include "far/baseline.hpp"
#include "far/checkpoint.hpp"
#include "far/commands.hpp"
#include "far/config.hpp"
#include "far/data.hpp"
#include "far/errors.hpp"
#include "far/evaluation.hpp"
#include "far/footprint_analysis.hpp"
#include "far/io.hpp"
#include "far/model.hpp"
#include "far/numerics.hpp"
#include "far/rng.hpp"
#include "far/synthetic.hpp"
#include "far/time.hpp"
#include "far/training.hpp"
#include "far/upscale.hpp"
