#pragma once

// Umbrella header: joint generative modeling of treatment and outcome
// trajectories plus expected-utility treatment selection.

#include "glyco/adam.hpp"
#include "glyco/cohort.hpp"
#include "glyco/config.hpp"
#include "glyco/decide.hpp"
#include "glyco/evaluate.hpp"
#include "glyco/io.hpp"
#include "glyco/log.hpp"
#include "glyco/metrics.hpp"
#include "glyco/model.hpp"
#include "glyco/preprocess.hpp"
#include "glyco/rng.hpp"
#include "glyco/tape.hpp"
#include "glyco/tensor.hpp"
#include "glyco/train.hpp"
#include "glyco/trajectory.hpp"
#include "glyco/transformer.hpp"
#include "glyco/utility.hpp"
