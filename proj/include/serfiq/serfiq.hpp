#pragma once

// Umbrella header.

#include "serfiq/dataset.hpp"
#include "serfiq/metrics.hpp"
#include "serfiq/net.hpp"
#include "serfiq/quality.hpp"
#include "serfiq/rng.hpp"
#include "serfiq/synth.hpp"
