#pragma once

#include "baselines.hpp"
#include "checkpoint.hpp"
#include "combinatorics.hpp"
#include "dataset.hpp"
#include "error.hpp"
#include "experiment.hpp"
#include "mci.hpp"
#include "memory.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "optimizer.hpp"
#include "pipeline.hpp"
#include "report.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "statistics.hpp"
#include "synthetic.hpp"
#include "trainer.hpp"
