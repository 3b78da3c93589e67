#pragma once

#include "qslm/analyzer/hierarchy.hpp"
#include "qslm/analyzer/sensitivity.hpp"
#include "qslm/error.hpp"
#include "qslm/evaluator.hpp"
#include "qslm/model/checkpoint.hpp"
#include "qslm/model/config.hpp"
#include "qslm/model/forward.hpp"
#include "qslm/model/params.hpp"
#include "qslm/model/trainer.hpp"
#include "qslm/quantizer.hpp"
#include "qslm/search.hpp"
#include "qslm/workbench/datasets.hpp"
#include "qslm/workbench/fixtures.hpp"
#include "qslm/workbench/report.hpp"
#include "qslm/workbench/run_config.hpp"
#include "qslm/workbench/runner.hpp"
#include "qslm/workbench/tokenizer.hpp"
