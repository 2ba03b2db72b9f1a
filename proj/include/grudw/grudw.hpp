#pragma once

#include "aft.hpp"
#include "analysis.hpp"
#include "checkpoint.hpp"
#include "cohort_io.hpp"
#include "config.hpp"
#include "encode.hpp"
#include "error.hpp"
#include "features.hpp"
#include "grid.hpp"
#include "grud.hpp"
#include "metrics.hpp"
#include "model_io.hpp"
#include "mtlr.hpp"
#include "optim.hpp"
#include "pipeline.hpp"
#include "random.hpp"
#include "record.hpp"
#include "split.hpp"
#include "sweep.hpp"
#include "synthetic.hpp"
#include "training.hpp"
#include "weibull.hpp"
