#pragma once

// Umbrella header.

#include "causal_lens/types.hpp"
#include "causal_lens/metric_models.hpp"
#include "causal_lens/ode.hpp"
#include "causal_lens/geodesic_engine.hpp"
#include "causal_lens/optics.hpp"
#include "causal_lens/parallel.hpp"
#include "causal_lens/matching.hpp"
#include "causal_lens/boundary_data.hpp"
#include "causal_lens/data_io.hpp"
#include "causal_lens/time_probe_recon.hpp"
#include "causal_lens/sky_shadow_recon.hpp"
#include "causal_lens/selftest.hpp"
