#pragma once

#include "dde/random.hpp"
#include "dde/mdp.hpp"
#include "dde/simulation.hpp"
#include "dde/dataset.hpp"
#include "dde/quantile.hpp"
#include "dde/bellman.hpp"
#include "dde/distortion.hpp"
#include "dde/ensemble.hpp"
#include "dde/control.hpp"
#include "dde/theory.hpp"
#include "dde/benchmarks.hpp"
#include "dde/parallel.hpp"
#include "dde/config.hpp"
#include "dde/harness.hpp"
