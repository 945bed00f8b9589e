#pragma once

// Umbrella header.
#include "amg/schedule.hpp"
#include "amg/corpus.hpp"
#include "amg/denoiser.hpp"
#include "amg/similarity.hpp"
#include "amg/guidance.hpp"
#include "amg/sampler.hpp"
#include "amg/metrics.hpp"
#include "amg/trace_io.hpp"
#include "amg/config.hpp"
#include "amg/experiment.hpp"
