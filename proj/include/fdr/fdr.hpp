#pragma once

// Umbrella header for the deformable registration toolkit.

#include "fdr/config.hpp"
#include "fdr/core.hpp"
#include "fdr/gradcheck.hpp"
#include "fdr/graph.hpp"
#include "fdr/io.hpp"
#include "fdr/losses.hpp"
#include "fdr/metrics.hpp"
#include "fdr/network.hpp"
#include "fdr/optim.hpp"
#include "fdr/resample.hpp"
#include "fdr/rng.hpp"
#include "fdr/synth.hpp"
#include "fdr/tape.hpp"
#include "fdr/warp.hpp"
