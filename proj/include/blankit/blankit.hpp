#pragma once

#include "blankit/corpus_gen.hpp"
#include "blankit/decision_tree.hpp"
#include "blankit/divergence.hpp"
#include "blankit/dominance.hpp"
#include "blankit/error.hpp"
#include "blankit/instrumentation.hpp"
#include "blankit/io.hpp"
#include "blankit/ir.hpp"
#include "blankit/metrics.hpp"
#include "blankit/pipeline.hpp"
#include "blankit/profiler.hpp"
#include "blankit/program_io.hpp"
#include "blankit/runtime_sim.hpp"
#include "blankit/trace.hpp"

namespace blankit {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace blankit
