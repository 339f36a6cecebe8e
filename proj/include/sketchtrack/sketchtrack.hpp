#pragma once

// Convenience include: the whole library.

#include "harness.hpp"
#include "linalg.hpp"
#include "rng.hpp"
#include "sketch.hpp"
#include "solver.hpp"
#include "streams.hpp"
#include "subexp.hpp"
#include "tracker.hpp"
