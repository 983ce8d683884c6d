#pragma once

// Umbrella header. pipeline_http.hpp (which pulls in cpp-httplib) is left
// out; include it explicitly where a network client is needed.

#include <ctree/analysis.hpp>
#include <ctree/capture.hpp>
#include <ctree/concepts.hpp>
#include <ctree/error.hpp>
#include <ctree/linalg.hpp>
#include <ctree/parallel.hpp>
#include <ctree/pipeline.hpp>
#include <ctree/rng.hpp>
#include <ctree/stats.hpp>
#include <ctree/text.hpp>
#include <ctree/toymodel.hpp>
#include <ctree/tree.hpp>
