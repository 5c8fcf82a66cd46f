#pragma once

#include "choquard/error.hpp"
#include "choquard/numeric.hpp"
#include "choquard/grid.hpp"
#include "choquard/riesz.hpp"
#include "choquard/linear.hpp"
#include "choquard/energy.hpp"
#include "choquard/bubbles.hpp"
#include "choquard/diagnostics.hpp"
#include "choquard/solver.hpp"
#include "choquard/experiments.hpp"
