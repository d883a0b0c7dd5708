#pragma once

#include "stihrl/ablation.hpp"
#include "stihrl/agents.hpp"
#include "stihrl/common.hpp"
#include "stihrl/config.hpp"
#include "stihrl/embedding.hpp"
#include "stihrl/environment.hpp"
#include "stihrl/eval.hpp"
#include "stihrl/hypergraph.hpp"
#include "stihrl/ingest.hpp"
#include "stihrl/manifest.hpp"
#include "stihrl/metrics.hpp"
#include "stihrl/pipeline.hpp"
#include "stihrl/synthetic.hpp"
#include "stihrl/tensor.hpp"
