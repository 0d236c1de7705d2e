#pragma once

#include "resonance_tracer/error.hpp"
#include "resonance_tracer/model.hpp"
#include "resonance_tracer/harmonics.hpp"
#include "resonance_tracer/newton.hpp"
#include "resonance_tracer/resonance.hpp"
#include "resonance_tracer/continuation.hpp"
#include "resonance_tracer/model_io.hpp"
#include "resonance_tracer/branch_io.hpp"
