#pragma once

// Volume-preserving deformable registration, header only.

#include "core.hpp"
#include "rng.hpp"
#include "parallel.hpp"
#include "io.hpp"
#include "image_ops.hpp"
#include "warp.hpp"
#include "field_analysis.hpp"
#include "objective.hpp"
#include "registration.hpp"
#include "stage1.hpp"
#include "metrics.hpp"
#include "synth.hpp"
#include "case_io.hpp"
